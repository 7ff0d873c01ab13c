#include "lift.hpp"

#include <algorithm>
#include <deque>
#include <map>

#include "common.hpp"

namespace winnow::lift {

using cfg::Edge;
using cfg::EdgeKind;
using isa::TerminatorKind;

const char* op_name(Op op) {
  switch (op) {
    case Op::Movi: return "movi";
    case Op::Mov: return "mov";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Xor: return "xor";
    case Op::Shl: return "shl";
    case Op::Shr: return "shr";
    case Op::SetFlags: return "setflags";
    case Op::SelectCond: return "selectcond";
    case Op::Load: return "load";
    case Op::Store: return "store";
    case Op::HostCall: return "hostcall";
    case Op::DirJump: return "dirjump";
    case Op::CondJump: return "condjump";
    case Op::Call: return "call";
    case Op::TailCall: return "tailcall";
    case Op::IcallDispatch: return "icall_dispatch";
    case Op::IjumpDispatch: return "ijump_dispatch";
    case Op::Ret: return "ret";
    case Op::Guard: return "guard";
    case Op::Exit: return "exit";
  }
  return "?";
}

std::string var_name(VarRef v) {
  switch (v.kind) {
    case VarRef::Kind::None: return "-";
    case VarRef::Kind::Reg:
      if (v.index == isa::kLR) return "g_lr";
      if (v.index == isa::kSP) return "g_sp";
      return "g_r" + std::to_string(v.index);
    case VarRef::Kind::Flag: {
      static const char* names[4] = {"g_n", "g_z", "g_c", "g_v"};
      return names[v.index & 3];
    }
    case VarRef::Kind::Temp: return "t" + std::to_string(v.index);
  }
  return "?";
}

namespace {

// The micro-op for a plain three-register ALU instruction.
Op alu_op(isa::Opcode op) {
  using enum isa::Opcode;
  switch (op) {
    case ADD: return Op::Add;
    case SUB: return Op::Sub;
    case MUL: return Op::Mul;
    case AND: return Op::And;
    case ORR: return Op::Or;
    case XOR: return Op::Xor;
    case SHL: return Op::Shl;
    case SHR: return Op::Shr;
    default: throw error(errc::internal, "not an alu opcode");
  }
}

// Lower a non-terminator instruction.
void lower_inner(const isa::Instruction& ins, std::vector<MicroOp>& out,
                 uint8_t& next_temp) {
  using enum isa::Opcode;
  MicroOp o;
  switch (ins.op) {
    case MOVI:
      o.op = Op::Movi;
      o.dst = reg(ins.rd);
      o.imm = (uint32_t)ins.imm;
      break;
    case MOV:
      o.op = Op::Mov;
      o.dst = reg(ins.rd);
      o.a = reg(ins.rs1);
      break;
    case ADD: case SUB: case MUL: case AND: case ORR: case XOR: case SHL: case SHR:
      o.op = alu_op(ins.op);
      o.dst = reg(ins.rd);
      o.a = reg(ins.rs1);
      o.b = reg(ins.rs2);
      break;
    case ADDI: {
      // No immediate form in the IR: materialize into a temp, then add.
      MicroOp m;
      m.op = Op::Movi;
      m.dst = temp(next_temp++);
      m.imm = (uint32_t)ins.imm;
      out.push_back(m);
      o.op = Op::Add;
      o.dst = reg(ins.rd);
      o.a = reg(ins.rs1);
      o.b = m.dst;
      break;
    }
    case CMP:
      o.op = Op::SetFlags;
      o.a = reg(ins.rs1);
      o.b = reg(ins.rs2);
      break;
    case LDR:
      o.op = Op::Load;
      o.dst = reg(ins.rd);
      o.a = reg(ins.rs1);
      o.imm = (uint32_t)ins.imm;
      break;
    case STR:
      o.op = Op::Store;
      o.a = reg(ins.rs1);
      o.b = reg(ins.rd);
      o.imm = (uint32_t)ins.imm;
      break;
    case SVC:
      o.op = Op::HostCall;
      o.imm = (uint32_t)ins.imm;
      break;
    default:
      throw error(errc::internal, "terminator lowered as inner instruction");
  }
  out.push_back(o);
}

struct NodeEdges {
  std::vector<uint32_t> flows, calls;
  std::optional<uint32_t> resume;
};

NodeEdges edges_of(const cfg::Cfg& g, uint32_t src) {
  NodeEdges out;
  for (auto it = g.edges.lower_bound(Edge{src, 0, EdgeKind::Flow, cfg::Provenance::Dynamic});
       it != g.edges.end() && it->src == src; ++it) {
    switch (it->kind) {
      case EdgeKind::Flow: out.flows.push_back(it->dst); break;
      case EdgeKind::Call: out.calls.push_back(it->dst); break;
      case EdgeKind::Resume: out.resume = it->dst; break;
    }
  }
  std::sort(out.flows.begin(), out.flows.end());
  std::sort(out.calls.begin(), out.calls.end());
  return out;
}

MicroOp guard_always(uint32_t site) {
  MicroOp o;
  o.op = Op::Guard;
  o.imm = 1;
  o.target = site;
  return o;
}

MicroOp dirjump(uint32_t target) {
  MicroOp o;
  o.op = Op::DirJump;
  o.target = target;
  return o;
}

}  // namespace

std::vector<MicroOp> lift_block(const structure::StructuredProgram& sp,
                                const isa::Program& prog, uint32_t block_start) {
  auto nit = sp.cfg.nodes.find(block_start);
  if (nit == sp.cfg.nodes.end())
    throw error(errc::internal, "no block at " + hex32(block_start));
  const cfg::Node& n = nit->second;

  std::vector<MicroOp> ops;
  uint8_t next_temp = 0;
  for (uint32_t a = n.start; a < n.end; a += 4)
    lower_inner(*isa::decode(prog.word_at(a)), ops, next_temp);

  const isa::Instruction ins = *isa::decode(prog.word_at(n.end));
  NodeEdges e = edges_of(sp.cfg, block_start);
  auto has = [](const std::vector<uint32_t>& v, uint32_t x) {
    return std::binary_search(v.begin(), v.end(), x);
  };

  switch (n.term) {
    case TerminatorKind::Fallthrough:
      // The block ends on an ordinary instruction: lower it, then continue
      // into the successor.
      lower_inner(ins, ops, next_temp);
      ops.push_back(dirjump(n.end + 4));
      break;

    case TerminatorKind::DirectJump: {
      uint32_t tgt = isa::branch_target(n.end, ins);
      if (has(e.calls, tgt)) {
        MicroOp o;
        o.op = Op::TailCall;
        o.target = tgt;
        ops.push_back(o);
      } else {
        ops.push_back(dirjump(tgt));
      }
      break;
    }

    case TerminatorKind::DirectCondJump: {
      uint32_t taken = isa::branch_target(n.end, ins);
      uint32_t fall = n.end + 4;
      if (taken == fall) {  // degenerate: both sides coincide
        ops.push_back(dirjump(fall));
        break;
      }
      bool taken_known = has(e.flows, taken) || has(e.calls, taken);
      bool fall_known = has(e.flows, fall) || has(e.calls, fall);
      if (!taken_known && !fall_known) {  // unreachable conditional, keep a guard
        ops.push_back(guard_always(n.end));
        break;
      }
      MicroOp sel;
      sel.op = Op::SelectCond;
      sel.dst = temp(next_temp++);
      sel.cond = ins.cond;
      ops.push_back(sel);
      MicroOp cj;
      cj.op = Op::CondJump;
      cj.a = sel.dst;
      if (has(e.calls, taken)) {
        cj.imm = 1;  // tail call when taken
        cj.target = taken;
      } else if (taken_known) {
        cj.imm = 0;  // plain branch
        cj.target = taken;
      } else {
        cj.imm = 2;  // unexplored side
        cj.target = n.end;
      }
      ops.push_back(cj);
      if (has(e.calls, fall)) {
        MicroOp o;
        o.op = Op::TailCall;
        o.target = fall;
        ops.push_back(o);
      } else if (fall_known) {
        ops.push_back(dirjump(fall));
      } else {
        ops.push_back(guard_always(n.end));
      }
      break;
    }

    case TerminatorKind::DirectCall:
    case TerminatorKind::IndirectCall: {
      if (e.calls.empty()) {  // unresolved call site
        ops.push_back(guard_always(n.end));
        break;
      }
      MicroOp o;
      if (n.term == TerminatorKind::DirectCall) {
        o.op = Op::Call;
        o.target = e.calls.front();
      } else {
        o.op = Op::IcallDispatch;
        o.a = reg(ins.rs1);
        o.target = n.end;
        o.targets = e.calls;
      }
      ops.push_back(o);
      if (e.resume) ops.push_back(dirjump(*e.resume));
      break;
    }

    case TerminatorKind::IndirectJump:
    case TerminatorKind::Return: {
      if (e.flows.empty() && e.calls.empty()) {
        if (n.term == TerminatorKind::Return) {
          MicroOp o;
          o.op = Op::Ret;
          ops.push_back(o);
        } else {
          ops.push_back(guard_always(n.end));  // targetless computed jump
        }
        break;
      }
      MicroOp o;
      o.op = Op::IjumpDispatch;
      o.a = n.term == TerminatorKind::Return ? reg(isa::kLR) : reg(ins.rs1);
      o.target = n.end;
      o.targets = e.flows;
      o.call_targets = e.calls;
      ops.push_back(o);
      break;
    }

    case TerminatorKind::SyscallExit: {
      MicroOp o;
      o.op = Op::Exit;
      o.a = reg(0);
      ops.push_back(o);
      break;
    }
  }
  return ops;
}

std::vector<LiftedFunction> lift(const structure::StructuredProgram& sp,
                                 const isa::Program& prog) {
  std::vector<LiftedFunction> out;
  for (uint32_t entry : sp.partition.func_entries) {
    LiftedFunction f;
    f.entry = entry;
    f.id = sp.partition.id_of(entry);
    for (const auto& [start, node] : sp.cfg.nodes) {
      if (sp.partition.assignment.at(start) != f.id) continue;
      f.blocks.push_back({start, lift_block(sp, prog, start)});
      for (const cfg::GuardSite& g : sp.cfg.guards)
        if (g.site == node.end) f.guards.push_back(g);
    }
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// liveness and localization

namespace {

constexpr uint8_t kArmTailCall = 1;

void add_regs(std::set<VarRef>& s, std::initializer_list<uint8_t> regs) {
  for (uint8_t r : regs) s.insert(reg(r));
}

void add_flags(std::set<VarRef>& s) {
  for (uint8_t i = 0; i < 4; i++) s.insert(flag(i));
}

// The argument state a callee may read: r0-r3 plus the stack pointer.  A
// tail call hands the same state over; callee-saved registers flow through
// untouched on either side of the ABI, so they are not uses here — a write
// to one that nobody reads afterwards simply never escapes the function.
void add_call_uses(std::set<VarRef>& s) { add_regs(s, {0, 1, 2, 3, isa::kSP}); }
void add_tail_uses(std::set<VarRef>& s) { add_call_uses(s); }
// The only value a return publishes by name is the result register.
void add_ret_uses(std::set<VarRef>& s) { add_regs(s, {0}); }
void add_call_defs(std::set<VarRef>& s) {
  add_regs(s, {0, 1, 2, 3, isa::kLR});
  add_flags(s);
}

struct UseDef {
  std::set<VarRef> use, def;
};

UseDef use_def(const MicroOp& o) {
  UseDef ud;
  auto use = [&](VarRef v) {
    if (v.kind != VarRef::Kind::None) ud.use.insert(v);
  };
  switch (o.op) {
    case Op::Movi: ud.def.insert(o.dst); break;
    case Op::Mov: use(o.a); ud.def.insert(o.dst); break;
    case Op::Add: case Op::Sub: case Op::Mul: case Op::And: case Op::Or:
    case Op::Xor: case Op::Shl: case Op::Shr:
      use(o.a);
      use(o.b);
      ud.def.insert(o.dst);
      break;
    case Op::SetFlags:
      use(o.a);
      use(o.b);
      add_flags(ud.def);
      break;
    case Op::SelectCond:
      add_flags(ud.use);
      ud.def.insert(o.dst);
      break;
    case Op::Load: use(o.a); ud.def.insert(o.dst); break;
    case Op::Store: use(o.a); use(o.b); break;
    case Op::HostCall:
      switch (o.imm) {
        case 1: case 2: add_regs(ud.use, {0}); break;          // putint/putchar
        case 3: add_regs(ud.def, {0}); break;                  // getint
        case 4: add_regs(ud.use, {0, 1}); add_regs(ud.def, {0}); break;  // spawn
        case 5: add_regs(ud.use, {0}); add_regs(ud.def, {0}); break;     // join
        default: break;
      }
      break;
    case Op::DirJump: break;
    case Op::CondJump:
      use(o.a);
      if (o.imm == kArmTailCall) add_tail_uses(ud.use);
      break;
    case Op::Call:
      add_call_uses(ud.use);
      add_call_defs(ud.def);
      break;
    case Op::TailCall: add_tail_uses(ud.use); break;
    case Op::IcallDispatch:
      use(o.a);
      add_call_uses(ud.use);
      add_call_defs(ud.def);
      break;
    case Op::IjumpDispatch:
      use(o.a);
      if (!o.call_targets.empty()) add_tail_uses(ud.use);
      break;
    case Op::Ret: add_ret_uses(ud.use); break;
    case Op::Guard: break;
    case Op::Exit: use(o.a); break;
  }
  return ud;
}

// Values that must sit in their global homes when this op runs, because the
// emitted realization reaches them by name (callees read argument registers
// and callers read results directly from the register file).  Explicitly
// marshaled operands (dispatch selectors, hostcall arguments) are exempt.
std::set<VarRef> abi_pinned(const MicroOp& o) {
  std::set<VarRef> s;
  switch (o.op) {
    case Op::Call:
    case Op::IcallDispatch: add_call_uses(s); break;
    case Op::TailCall: add_tail_uses(s); break;
    case Op::CondJump:
      if (o.imm == kArmTailCall) add_tail_uses(s);
      break;
    case Op::IjumpDispatch:
      if (!o.call_targets.empty()) add_tail_uses(s);
      break;
    case Op::Ret: add_ret_uses(s); break;
    default: break;
  }
  return s;
}

bool is_call_like(const MicroOp& o) {
  return o.op == Op::Call || o.op == Op::IcallDispatch;
}

struct Liveness {
  std::map<uint32_t, std::set<VarRef>> in, out;
};

std::set<VarRef> transfer(const std::vector<MicroOp>& ops, std::set<VarRef> live) {
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    UseDef ud = use_def(*it);
    for (const VarRef& v : ud.def) live.erase(v);
    live.insert(ud.use.begin(), ud.use.end());
  }
  return live;
}

std::vector<uint32_t> block_succs(const Block& b) {
  std::vector<uint32_t> out;
  for (const MicroOp& o : b.ops) {
    if (o.op == Op::DirJump) out.push_back(o.target);
    if (o.op == Op::CondJump && o.imm == 0) out.push_back(o.target);
    if (o.op == Op::IjumpDispatch)
      out.insert(out.end(), o.targets.begin(), o.targets.end());
  }
  return out;
}

Liveness analyze(const LiftedFunction& f) {
  Liveness lv;
  std::map<uint32_t, const Block*> by_start;
  for (const Block& b : f.blocks) {
    by_start[b.start] = &b;
    lv.in[b.start];
    lv.out[b.start];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto it = f.blocks.rbegin(); it != f.blocks.rend(); ++it) {
      std::set<VarRef> out;
      for (uint32_t s : block_succs(*it))
        out.insert(lv.in.at(s).begin(), lv.in.at(s).end());
      std::set<VarRef> in = transfer(it->ops, out);
      if (out != lv.out.at(it->start) || in != lv.in.at(it->start)) {
        lv.out[it->start] = std::move(out);
        lv.in[it->start] = std::move(in);
        changed = true;
      }
    }
  }
  return lv;
}

bool is_global(VarRef v) {
  return v.kind == VarRef::Kind::Reg || v.kind == VarRef::Kind::Flag;
}

}  // namespace

bool callee_observable(VarRef v) {
  if (v.kind != VarRef::Kind::Reg) return false;
  return v.index == 0 || (v.index >= 4 && v.index <= 11) || v.index == isa::kSP;
}

bool caller_saved(VarRef v) {
  if (v.kind == VarRef::Kind::Flag) return true;
  if (v.kind != VarRef::Kind::Reg) return false;
  return !callee_observable(v) || v.index == 0;  // r0 is the result slot
}

std::set<VarRef> live_in(const LiftedFunction& f) {
  if (f.blocks.empty()) return {};
  Liveness lv = analyze(f);
  std::set<VarRef> s;
  for (const VarRef& v : lv.in.at(f.entry))
    if (is_global(v)) s.insert(v);
  return s;
}

LiftedFunction localize(LiftedFunction f) {
  if (f.blocks.empty()) return f;
  Liveness lv = analyze(f);

  std::set<VarRef> mentioned, blocked;
  for (const VarRef& v : lv.in.at(f.entry))
    if (is_global(v)) blocked.insert(v);
  for (const Block& b : f.blocks) {
    // Walk backward so each op sees the live-after set on the way.
    std::set<VarRef> live = lv.out.at(b.start);
    for (auto it = b.ops.rbegin(); it != b.ops.rend(); ++it) {
      UseDef ud = use_def(*it);
      for (const VarRef& v : ud.use)
        if (is_global(v)) mentioned.insert(v);
      for (const VarRef& v : ud.def)
        if (is_global(v)) mentioned.insert(v);
      for (const VarRef& v : abi_pinned(*it)) blocked.insert(v);
      if (is_call_like(*it))
        for (const VarRef& v : live)
          if (is_global(v) && !caller_saved(v)) blocked.insert(v);
      for (const VarRef& v : ud.def) live.erase(v);
      live.insert(ud.use.begin(), ud.use.end());
    }
  }

  f.localized.clear();
  std::set_difference(mentioned.begin(), mentioned.end(), blocked.begin(),
                      blocked.end(), std::inserter(f.localized, f.localized.begin()));
  return f;
}

std::string render(const LiftedFunction& f) {
  std::string out = "func " + hex32(f.entry) + "\n";
  for (const Block& b : f.blocks) {
    out += hex32(b.start) + ":\n";
    for (const MicroOp& o : b.ops) {
      out += "  ";
      out += op_name(o.op);
      if (o.dst.kind != VarRef::Kind::None) out += " " + var_name(o.dst);
      if (o.a.kind != VarRef::Kind::None) out += " " + var_name(o.a);
      if (o.b.kind != VarRef::Kind::None) out += " " + var_name(o.b);
      switch (o.op) {
        case Op::Movi: case Op::Load: case Op::Store: case Op::HostCall:
          out += " #" + std::to_string(o.imm);
          break;
        case Op::SelectCond: out += std::string(" ") + isa::cond_name(o.cond); break;
        case Op::CondJump:
          out += o.imm == 0 ? " ->" : o.imm == 1 ? " tail" : " guard";
          out += " " + hex32(o.target);
          break;
        case Op::DirJump: case Op::Call: case Op::TailCall:
          out += " " + hex32(o.target);
          break;
        case Op::Guard: case Op::IcallDispatch: case Op::IjumpDispatch:
          out += " @" + hex32(o.target);
          for (uint32_t t : o.targets) out += " " + hex32(t);
          for (uint32_t t : o.call_targets) out += " tail:" + hex32(t);
          break;
        default: break;
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace winnow::lift
