#pragma once

// Lifting structured functions into a small micro-op IR, plus localization
// of register variables.
//
// Every MiniISA instruction lowers to one or more micro-ops over variables:
// the sixteen guest registers, the four condition flags, and per-block
// temporaries.  Block terminators lower according to the structured edges:
// plain jumps become dirjump/condjump between labeled blocks, calls become
// call + a jump to the resume block, promoted edges become tail calls, and
// indirect transfers become dispatch ops that compare the source register
// against the recorded target set.  Unexplored conditional sides and
// unresolved call sites lower to guard ops; how a guard is realized
// (fail-safe trap or transparent fold) is the emitter's concern, so lifted
// functions are guard-mode independent.
//
// Localization then runs a backward liveness analysis and demotes register
// variables to function locals.  A variable is demoted only when it is not
// live-in at the function entry, is not part of the state a call or tail
// call publishes to its callee (arguments r0..r3 and sp must sit in their
// global homes, since lifted functions take no parameters), is not the
// return value r0 at a return, and at every call is either dead afterwards
// or caller-saved.  Callee-saved registers that a function writes but never
// reads simply never escape: their global homes keep the entry values,
// which is exactly the preservation the caller relies on.  Demoted
// variables never escape, so emitted code can keep them in locals where the
// host compiler is free to register-allocate them.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "structure.hpp"

namespace winnow::lift {

enum class Op : uint8_t {
  Movi,
  Mov,
  Add,
  Sub,
  Mul,
  And,
  Or,
  Xor,
  Shl,
  Shr,
  SetFlags,    // flags = cmp(a, b); defines n, z, c, v
  SelectCond,  // dst = cond holds per the flags
  Load,        // dst = mem32[a + imm]
  Store,       // mem32[a + imm] = b
  HostCall,    // imm selects: 1 putint, 2 putchar, 3 getint, 4 spawn, 5 join
  DirJump,     // goto target
  CondJump,    // if (a) <arm>; arm kind in imm: 0 goto, 1 tail call, 2 guard
  Call,        // call function at target
  TailCall,    // call function at target, then return
  IcallDispatch,  // compare a against targets, call the match (site = target)
  IjumpDispatch,  // compare a against targets (goto) / call_targets (tail)
  Ret,
  Guard,  // unexplored path; trap or fold at emission (site = target)
  Exit,   // process exit with r0
};

const char* op_name(Op op);

struct VarRef {
  enum class Kind : uint8_t { None, Reg, Flag, Temp };
  Kind kind = Kind::None;
  uint8_t index = 0;

  auto operator<=>(const VarRef&) const = default;
};

inline VarRef reg(uint8_t i) { return {VarRef::Kind::Reg, i}; }
inline VarRef flag(uint8_t i) { return {VarRef::Kind::Flag, i}; }
inline VarRef temp(uint8_t i) { return {VarRef::Kind::Temp, i}; }

enum : uint8_t { kFlagN = 0, kFlagZ = 1, kFlagC = 2, kFlagV = 3 };

// "g_r5", "g_sp", "g_n", "t3" -- used in rendered IR and emitted code names.
std::string var_name(VarRef v);

struct MicroOp {
  Op op{};
  VarRef dst, a, b;
  uint32_t imm = 0;     // movi value / load-store offset / hostcall no. / arm kind
  isa::Cond cond{};     // SelectCond only
  uint32_t target = 0;  // jump label, callee entry, or guard/dispatch site
  std::vector<uint32_t> targets;       // dispatch goto/call arms (ascending)
  std::vector<uint32_t> call_targets;  // ijump arms that are tail calls

  bool operator==(const MicroOp&) const = default;
};

struct Block {
  uint32_t start = 0;
  std::vector<MicroOp> ops;

  bool operator==(const Block&) const = default;
};

struct LiftedFunction {
  uint32_t entry = 0;
  uint32_t id = 0;
  std::vector<Block> blocks;  // ascending start; entry not necessarily first
  std::set<VarRef> localized;
  std::vector<cfg::GuardSite> guards;  // conditional guard sites herein

  bool operator==(const LiftedFunction&) const = default;
};

// Lower one block of `sp` (micro-ops only; no localization).
std::vector<MicroOp> lift_block(const structure::StructuredProgram& sp,
                                const isa::Program& prog, uint32_t block_start);

// Lift every function, ascending by entry.  Localization not applied.
std::vector<LiftedFunction> lift(const structure::StructuredProgram& sp,
                                 const isa::Program& prog);

// Liveness-based demotion; fills `localized` (idempotent).
LiftedFunction localize(LiftedFunction f);

// Variables the caller of a lifted function may rely on after it returns.
bool callee_observable(VarRef v);
// Variables a call may clobber (so values in them cannot cross a call).
bool caller_saved(VarRef v);

// Registers/flags live at the entry block, from the same analysis that
// drives localize(); exposed for tests.
std::set<VarRef> live_in(const LiftedFunction& f);

// One line per op, for debugging and golden tests.
std::string render(const LiftedFunction& f);

}  // namespace winnow::lift
