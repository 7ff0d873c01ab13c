#pragma once
// Reference interpreter and random generator for lifted functions, used to
// check that localization preserves observable behaviour.  The same function
// is executed twice — once with every variable in its global home, once with
// the localized set held in zero-initialized locals — and the observable
// outcome (output, memory, end kind and code, and the ABI-visible registers
// r0/r4..r11/sp) must be identical.
//
// Call-like ops are modelled as a deterministic adversarial callee: it reads
// the argument registers and stack pointer out of their *global* homes,
// mixes them into the output stream, overwrites every caller-saved location
// with values derived from that observation, and leaves a result in r0.  A
// variable that was wrongly localized therefore shows up either as a stale
// argument (different observation) or as a stale ABI register at the end.

#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cfg.hpp"
#include "lift.hpp"

namespace winnow::testoracle {

using lift::LiftedFunction;
using lift::MicroOp;
using lift::Op;
using lift::VarRef;

enum class EndKind : uint8_t { Ret, Tail, Exit, Guard, Trap, StepLimit };

struct MachineState {
  std::array<uint32_t, 16> regs{};
  std::array<uint8_t, 4> flags{};
  std::vector<uint8_t> mem = std::vector<uint8_t>(4096);
  std::string input;
  size_t in_pos = 0;
  std::string out;

  EndKind end = EndKind::StepLimit;
  uint32_t end_code = 0;  // exit code / guard site / trap code
};

struct Observables {
  EndKind end;
  uint32_t end_code;
  std::string out;
  std::vector<uint8_t> mem;
  std::vector<uint32_t> abi_regs;  // the published result (global r0) at ret/tail

  bool operator==(const Observables&) const = default;
};

inline uint64_t mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

class Interp {
public:
  Interp(const LiftedFunction& f, MachineState& st, bool honor_localized)
      : f_(f), st_(st), honored_(honor_localized) {}

  void run() {
    std::map<uint32_t, const lift::Block*> by_start;
    for (const lift::Block& b : f_.blocks) by_start[b.start] = &b;
    uint32_t pc = f_.entry;
    int steps = 0;
    for (;;) {
      if (++steps > 4096) {
        st_.end = EndKind::StepLimit;
        return;
      }
      auto it = by_start.find(pc);
      if (it == by_start.end()) {
        trap(97);
        return;
      }
      std::optional<uint32_t> next = block(*it->second);
      if (!next) return;
      pc = *next;
    }
  }

private:
  uint32_t rd(VarRef v) {
    if (v.kind == VarRef::Kind::Temp) return temps_[v.index];
    if (honored_ && f_.localized.count(v)) return locals_[v];
    if (v.kind == VarRef::Kind::Reg) return st_.regs[v.index];
    return st_.flags[v.index & 3];
  }

  void wr(VarRef v, uint32_t x) {
    if (v.kind == VarRef::Kind::Temp) {
      temps_[v.index] = x;
    } else if (honored_ && f_.localized.count(v)) {
      locals_[v] = v.kind == VarRef::Kind::Flag ? (x & 1) : x;
    } else if (v.kind == VarRef::Kind::Reg) {
      st_.regs[v.index] = x;
    } else {
      st_.flags[v.index & 3] = (uint8_t)(x & 1);
    }
  }

  void trap(uint32_t code) {
    st_.end = EndKind::Trap;
    st_.end_code = code;
  }

  bool cond_value(isa::Cond c) {
    bool n = rd(lift::flag(lift::kFlagN)), z = rd(lift::flag(lift::kFlagZ)),
         v = rd(lift::flag(lift::kFlagV));
    switch (c) {
      case isa::Cond::EQ: return z;
      case isa::Cond::NE: return !z;
      case isa::Cond::LT: return n != v;
      case isa::Cond::GE: return n == v;
      case isa::Cond::GT: return !z && n == v;
      case isa::Cond::LE: return z || n != v;
    }
    return false;
  }

  // The modelled callee: observes the global argument registers, emits the
  // observation, clobbers the caller-saved state deterministically, and
  // leaves callee-saved registers alone (the ABI's preservation guarantee).
  void model_call(uint32_t target) {
    uint64_t h = mix(0x5eedu, target);
    h = mix(h, st_.regs[0]);
    h = mix(h, st_.regs[1]);
    h = mix(h, st_.regs[2]);
    h = mix(h, st_.regs[3]);
    h = mix(h, st_.regs[isa::kSP]);
    st_.out += "[call " + std::to_string(h & 0xffffffffu) + "]";
    for (uint8_t r : {1, 2, 3, 12, 13, (int)isa::kLR})
      st_.regs[r] = (uint32_t)mix(h, 0x100u + r);
    for (uint8_t i = 0; i < 4; i++) st_.flags[i] = (uint8_t)(mix(h, 0x200u + i) & 1);
    st_.regs[0] = (uint32_t)mix(h, 0x300u);  // result
  }

  uint32_t getint() {
    const std::string& in = st_.input;
    size_t& pos = st_.in_pos;
    while (pos < in.size() && std::isspace((unsigned char)in[pos])) pos++;
    size_t p = pos;
    bool neg = false;
    if (p < in.size() && (in[p] == '-' || in[p] == '+')) {
      neg = in[p] == '-';
      p++;
    }
    uint32_t acc = 0;
    bool any = false;
    while (p < in.size() && std::isdigit((unsigned char)in[p])) {
      acc = acc * 10 + (uint32_t)(in[p] - '0');
      any = true;
      p++;
    }
    if (!any) return 0;
    pos = p;
    return neg ? 0u - acc : acc;
  }

  // Runs one block; returns the next block start, or nullopt when the
  // function (or the whole run) ended.
  std::optional<uint32_t> block(const lift::Block& b) {
    for (const MicroOp& o : b.ops) {
      switch (o.op) {
        case Op::Movi: wr(o.dst, o.imm); break;
        case Op::Mov: wr(o.dst, rd(o.a)); break;
        case Op::Add: wr(o.dst, rd(o.a) + rd(o.b)); break;
        case Op::Sub: wr(o.dst, rd(o.a) - rd(o.b)); break;
        case Op::Mul: wr(o.dst, rd(o.a) * rd(o.b)); break;
        case Op::And: wr(o.dst, rd(o.a) & rd(o.b)); break;
        case Op::Or: wr(o.dst, rd(o.a) | rd(o.b)); break;
        case Op::Xor: wr(o.dst, rd(o.a) ^ rd(o.b)); break;
        case Op::Shl: wr(o.dst, rd(o.a) << (rd(o.b) & 31)); break;
        case Op::Shr: wr(o.dst, rd(o.a) >> (rd(o.b) & 31)); break;
        case Op::SetFlags: {
          uint32_t wa = rd(o.a), wb = rd(o.b), wd = wa - wb;
          wr(lift::flag(lift::kFlagN), wd >> 31);
          wr(lift::flag(lift::kFlagZ), wd == 0);
          wr(lift::flag(lift::kFlagC), wa >= wb);
          wr(lift::flag(lift::kFlagV), (((wa ^ wb) & (wa ^ wd)) >> 31) & 1);
          break;
        }
        case Op::SelectCond: wr(o.dst, cond_value(o.cond) ? 1 : 0); break;
        case Op::Load: {
          uint32_t a = rd(o.a) + o.imm;
          if ((a & 3) || a + 4 > st_.mem.size()) {
            trap(98);
            return std::nullopt;
          }
          wr(o.dst, (uint32_t)st_.mem[a] | (uint32_t)st_.mem[a + 1] << 8 |
                        (uint32_t)st_.mem[a + 2] << 16 | (uint32_t)st_.mem[a + 3] << 24);
          break;
        }
        case Op::Store: {
          uint32_t a = rd(o.a) + o.imm, v = rd(o.b);
          if ((a & 3) || a + 4 > st_.mem.size()) {
            trap(98);
            return std::nullopt;
          }
          st_.mem[a] = (uint8_t)v;
          st_.mem[a + 1] = (uint8_t)(v >> 8);
          st_.mem[a + 2] = (uint8_t)(v >> 16);
          st_.mem[a + 3] = (uint8_t)(v >> 24);
          break;
        }
        case Op::HostCall:
          switch (o.imm) {
            case 1:
              st_.out += std::to_string((int32_t)rd(lift::reg(0)));
              st_.out += '\n';
              break;
            case 2: st_.out += (char)(rd(lift::reg(0)) & 0xff); break;
            case 3: wr(lift::reg(0), getint()); break;
            default:
              trap(98);  // spawn/join not modelled here
              return std::nullopt;
          }
          break;
        case Op::DirJump: return o.target;
        case Op::CondJump:
          if (rd(o.a)) {
            if (o.imm == 0) return o.target;
            if (o.imm == 1) {
              model_call(o.target);
              st_.end = EndKind::Tail;
              return std::nullopt;
            }
            st_.end = EndKind::Guard;
            st_.end_code = o.target;
            return std::nullopt;
          }
          break;
        case Op::Call: model_call(o.target); break;
        case Op::IcallDispatch: {
          uint32_t v = rd(o.a);
          bool hit = false;
          for (uint32_t t : o.targets)
            if (t == v) hit = true;
          if (!hit) {
            st_.end = EndKind::Guard;
            st_.end_code = o.target;
            return std::nullopt;
          }
          model_call(v);
          break;
        }
        case Op::IjumpDispatch: {
          uint32_t v = rd(o.a);
          for (uint32_t t : o.targets)
            if (t == v) return t;
          for (uint32_t t : o.call_targets)
            if (t == v) {
              model_call(v);
              st_.end = EndKind::Tail;
              return std::nullopt;
            }
          st_.end = EndKind::Guard;
          st_.end_code = o.target;
          return std::nullopt;
        }
        case Op::TailCall:
          model_call(o.target);
          st_.end = EndKind::Tail;
          return std::nullopt;
        case Op::Ret:
          st_.end = EndKind::Ret;
          return std::nullopt;
        case Op::Guard:
          if (o.imm == 1 || rd(o.a)) {
            st_.end = EndKind::Guard;
            st_.end_code = o.target;
            return std::nullopt;
          }
          break;
        case Op::Exit:
          st_.end = EndKind::Exit;
          st_.end_code = rd(o.a);
          return std::nullopt;
      }
    }
    trap(97);  // fell off the block: resume from a non-returning call
    return std::nullopt;
  }

  const LiftedFunction& f_;
  MachineState& st_;
  bool honored_;
  std::map<VarRef, uint32_t> locals_;
  std::map<uint8_t, uint32_t> temps_;
};

inline Observables run_function(const LiftedFunction& f, MachineState st,
                                bool honor_localized) {
  Interp(f, st, honor_localized).run();
  Observables ob;
  ob.end = st.end;
  ob.end_code = st.end_code;
  ob.out = st.out;
  ob.mem = st.mem;
  if (st.end == EndKind::Ret || st.end == EndKind::Tail)
    ob.abi_regs.push_back(st.regs[0]);
  return ob;
}

// ---------------------------------------------------------------------------
// random function generator
//
// Produces ABI-plausible functions: after a modelled call no caller-saved
// variable is read until it has been rewritten (real lifted code obeys this
// because the ABI makes those values meaningless).  Control flow only moves
// forward, so every function terminates.

class FunctionGen {
public:
  explicit FunctionGen(std::mt19937& rng) : rng_(rng) {}

  LiftedFunction generate() {
    LiftedFunction f;
    int nblocks = pick(1, 6);
    std::vector<uint32_t> starts;
    for (int i = 0; i < nblocks; i++) starts.push_back(0x1000 + 16u * (uint32_t)i);
    f.entry = starts[0];

    // poison_in[b]: caller-saved variables whose values are unspecified on
    // entry to b on some path (set after each modelled call).
    std::vector<std::set<VarRef>> poison_in(nblocks);
    for (int i = 0; i < nblocks; i++) {
      lift::Block b;
      b.start = starts[i];
      poison_ = poison_in[i];
      next_temp_ = 0;
      int inner = pick(0, 5);
      for (int k = 0; k < inner; k++) gen_inner(b.ops);
      gen_terminator(b.ops, i, nblocks, starts, poison_in);
      f.blocks.push_back(std::move(b));
    }
    return f;
  }

private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  VarRef some_reg() { return lift::reg((uint8_t)pick(0, 15)); }

  // A register whose current value is meaningful (not poisoned); if the rng
  // keeps picking poisoned ones, define one on the spot.  The define lands
  // before the op under construction, which is appended afterwards.
  VarRef readable_reg(std::vector<MicroOp>& ops) {
    for (int tries = 0; tries < 16; tries++) {
      VarRef v = some_reg();
      if (!poison_.count(v)) return v;
    }
    VarRef v = some_reg();
    define(ops, v);
    return v;
  }

  void define(std::vector<MicroOp>& ops, VarRef v) {
    MicroOp m;
    m.op = Op::Movi;
    m.dst = v;
    m.imm = (uint32_t)pick(0, 1 << 20);
    ops.push_back(m);
    poison_.erase(v);
  }

  void gen_inner(std::vector<MicroOp>& ops) {
    MicroOp o;
    switch (pick(0, 9)) {
      case 0: {
        o.op = Op::Movi;
        o.dst = some_reg();
        o.imm = (uint32_t)pick(0, 1 << 20);
        break;
      }
      case 1:
        o.op = Op::Mov;
        o.dst = some_reg();
        o.a = readable_reg(ops);
        break;
      case 2: case 3: case 4: {
        static const Op kAlu[] = {Op::Add, Op::Sub, Op::Mul, Op::And,
                                  Op::Or,  Op::Xor, Op::Shl, Op::Shr};
        o.op = kAlu[pick(0, 7)];
        o.dst = some_reg();
        o.a = readable_reg(ops);
        o.b = readable_reg(ops);
        break;
      }
      case 5: {
        o.op = Op::SetFlags;
        o.a = readable_reg(ops);
        o.b = readable_reg(ops);
        for (uint8_t j = 0; j < 4; j++) poison_.erase(lift::flag(j));
        break;
      }
      case 6: {  // aligned in-bounds store then load covers the memory path
        o.op = Op::Store;
        o.a = lift::temp(next_temp_);
        o.b = readable_reg(ops);
        o.imm = 0;
        MicroOp m;
        m.op = Op::Movi;
        m.dst = lift::temp(next_temp_++);
        m.imm = (uint32_t)(pick(0, 1000) * 4);
        ops.push_back(m);
        ops.push_back(o);
        return;
      }
      case 7: {
        o.op = Op::Load;
        o.dst = some_reg();
        o.a = lift::temp(next_temp_);
        o.imm = 0;
        MicroOp m;
        m.op = Op::Movi;
        m.dst = lift::temp(next_temp_++);
        m.imm = (uint32_t)(pick(0, 1000) * 4);
        ops.push_back(m);
        ops.push_back(o);
        poison_.erase(o.dst);
        return;
      }
      case 8: {  // hostcall: putint or getint
        o.op = Op::HostCall;
        if (pick(0, 1)) {
          o.imm = 1;
          if (poison_.count(lift::reg(0))) define(ops, lift::reg(0));
        } else {
          o.imm = 3;
          poison_.erase(lift::reg(0));
        }
        break;
      }
      case 9: {
        refresh_flags_if_poisoned(ops);
        o.op = Op::SelectCond;
        o.dst = some_reg();
        o.cond = (isa::Cond)pick(0, 5);
        break;
      }
    }
    ops.push_back(o);
    if (o.dst.kind != VarRef::Kind::None) poison_.erase(o.dst);
  }

  void refresh_flags_if_poisoned(std::vector<MicroOp>& ops) {
    for (uint8_t i = 0; i < 4; i++)
      if (poison_.count(lift::flag(i))) {
        MicroOp sf;
        sf.op = Op::SetFlags;
        sf.a = readable_reg(ops);
        sf.b = readable_reg(ops);
        ops.push_back(sf);
        for (uint8_t j = 0; j < 4; j++) poison_.erase(lift::flag(j));
        return;
      }
  }

  void poison_call_clobbers() {
    for (uint8_t r : {0, 1, 2, 3, 12, 13, (int)isa::kLR}) poison_.insert(lift::reg(r));
    for (uint8_t i = 0; i < 4; i++) poison_.insert(lift::flag(i));
    poison_.erase(lift::reg(0));  // the modelled result is meaningful
  }

  void gen_terminator(std::vector<MicroOp>& ops, int i, int nblocks,
                      const std::vector<uint32_t>& starts,
                      std::vector<std::set<VarRef>>& poison_in) {
    auto forward = [&] { return starts[(size_t)pick(i + 1, nblocks - 1)]; };
    auto merge_poison = [&](uint32_t target) {
      for (int k = i + 1; k < nblocks; k++)
        if (starts[k] == target)
          poison_in[k].insert(poison_.begin(), poison_.end());
    };
    bool last = i == nblocks - 1;
    int choice = last ? pick(6, 9) : pick(0, 9);
    switch (choice) {
      case 0: case 1: case 2: {  // plain jump
        MicroOp o;
        o.op = Op::DirJump;
        o.target = forward();
        merge_poison(o.target);
        ops.push_back(o);
        break;
      }
      case 3: case 4: {  // conditional branch, both sides known
        gen_select(ops);
        MicroOp cj;
        cj.op = Op::CondJump;
        cj.a = ops.back().dst;
        cj.imm = 0;
        cj.target = forward();
        ops.push_back(cj);
        MicroOp dj;
        dj.op = Op::DirJump;
        dj.target = forward();
        merge_poison(cj.target);
        merge_poison(dj.target);
        ops.push_back(dj);
        break;
      }
      case 5: {  // call, then resume in the next block
        MicroOp c;
        c.op = Op::Call;
        c.target = 0x5000 + 16u * (uint32_t)pick(0, 3);
        ops.push_back(c);
        poison_call_clobbers();
        MicroOp o;
        o.op = Op::DirJump;
        o.target = forward();
        merge_poison(o.target);
        ops.push_back(o);
        break;
      }
      case 6: {
        MicroOp o;
        o.op = Op::Ret;
        ops.push_back(o);
        break;
      }
      case 7: {
        MicroOp o;
        o.op = Op::Exit;
        o.a = lift::reg(0);
        if (poison_.count(o.a)) define(ops, o.a);
        ops.push_back(o);
        break;
      }
      case 8: {
        MicroOp o;
        o.op = Op::TailCall;
        o.target = 0x5000 + 16u * (uint32_t)pick(0, 3);
        ops.push_back(o);
        break;
      }
      case 9: {  // guarded conditional: taken side unexplored
        gen_select(ops);
        MicroOp cj;
        cj.op = Op::CondJump;
        cj.a = ops.back().dst;
        cj.imm = 2;
        cj.target = starts[i];  // site stands in for the address
        ops.push_back(cj);
        if (last) {
          MicroOp o;
          o.op = Op::Ret;
          ops.push_back(o);
        } else {
          MicroOp dj;
          dj.op = Op::DirJump;
          dj.target = forward();
          merge_poison(dj.target);
          ops.push_back(dj);
        }
        break;
      }
    }
  }

  void gen_select(std::vector<MicroOp>& ops) {
    refresh_flags_if_poisoned(ops);
    MicroOp sel;
    sel.op = Op::SelectCond;
    sel.dst = lift::temp(next_temp_++);
    sel.cond = (isa::Cond)pick(0, 5);
    ops.push_back(sel);
  }

  std::mt19937& rng_;
  std::set<VarRef> poison_;
  uint8_t next_temp_ = 0;
};

inline MachineState random_state(std::mt19937& rng) {
  MachineState st;
  for (auto& r : st.regs) r = rng();
  for (auto& f : st.flags) f = (uint8_t)(rng() & 1);
  for (auto& m : st.mem) m = (uint8_t)rng();
  st.input = std::to_string((int32_t)rng()) + " " + std::to_string(rng() % 1000);
  return st;
}

}  // namespace winnow::testoracle
