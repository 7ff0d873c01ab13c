#include "emit.hpp"

#include <algorithm>
#include <set>

#include "common.hpp"

namespace winnow::emit {

using lift::Block;
using lift::LiftedFunction;
using lift::MicroOp;
using lift::Op;
using lift::VarRef;

const char* guard_mode_name(GuardMode m) {
  return m == GuardMode::FailSafe ? "failsafe" : "transparent";
}

std::optional<GuardMode> guard_mode_from_name(const std::string& s) {
  if (s == "failsafe") return GuardMode::FailSafe;
  if (s == "transparent") return GuardMode::Transparent;
  return std::nullopt;
}

namespace {

std::string hexu(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08xu", v);
  return buf;
}

std::string func_name(uint32_t entry) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f_%08x", entry);
  return buf;
}

std::string label_name(uint32_t addr) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "L_%08x", addr);
  return buf;
}

// Strips the g_ prefix off the global's name: g_r3 -> l_r3.
std::string local_name(VarRef v) {
  return "l_" + lift::var_name(v).substr(2);
}

bool is_terminal(const MicroOp& o) {
  switch (o.op) {
    case Op::DirJump:
    case Op::TailCall:
    case Op::IjumpDispatch:  // every arm leaves the block
    case Op::Ret:
    case Op::Exit:
      return true;
    case Op::Guard:
      return o.imm == 1;
    default:
      return false;
  }
}

// Transparent mode folds guards away at emission time: a guarded conditional
// becomes an unconditional transfer to its explored side, and condition
// temps left without a reader are dropped with it.
std::vector<MicroOp> fold_block(const std::vector<MicroOp>& in, GuardMode mode) {
  if (mode == GuardMode::FailSafe) return in;
  std::vector<MicroOp> out;
  for (const MicroOp& o : in) {
    if (o.op == Op::CondJump && o.imm == 2) continue;  // unexplored taken side
    if (o.op == Op::Guard && o.imm == 1 && !out.empty() &&
        out.back().op == Op::CondJump) {
      // unexplored fall side: promote the taken arm to an unconditional exit
      MicroOp arm = out.back();
      out.pop_back();
      MicroOp r;
      r.op = arm.imm == 1 ? Op::TailCall : Op::DirJump;
      r.target = arm.target;
      out.push_back(r);
      continue;
    }
    out.push_back(o);
  }
  std::set<VarRef> used;
  for (const MicroOp& o : out) {
    if (o.a.kind != VarRef::Kind::None) used.insert(o.a);
    if (o.b.kind != VarRef::Kind::None) used.insert(o.b);
  }
  std::erase_if(out, [&](const MicroOp& o) {
    return o.op == Op::SelectCond && !used.count(o.dst);
  });
  return out;
}

class Emitter {
public:
  Emitter(const structure::StructuredProgram& sp, const isa::Program& prog,
          const std::vector<LiftedFunction>& funcs, const Options& opt)
      : sp_(sp), prog_(prog), funcs_(funcs), opt_(opt) {}

  EmittedSource run() {
    for (const LiftedFunction& f : funcs_) {
      if (f.blocks.empty())
        throw error(errc::internal, "function " + hex32(f.entry) + " has no blocks");
      out_.functions[f.entry] = func_name(f.entry);
    }
    uint32_t data_end = prog_.data_base + (uint32_t)prog_.data.size();
    if (prog_.text_end() > opt_.mem_size || data_end > opt_.mem_size)
      throw error(errc::format, "program image does not fit in guest memory");

    prelude();
    for (const LiftedFunction& f : funcs_) line("void " + func_name(f.entry) + "(void);");
    line("");
    runtime();
    for (const LiftedFunction& f : funcs_) function(f);
    emit_main();
    return std::move(out_);
  }

private:
  // --- text building ---------------------------------------------------

  void line(const std::string& s) {
    out_.text += s;
    out_.text += '\n';
  }

  void stmt(const std::string& s) { line("  " + s); }

  // --- variable mapping -------------------------------------------------

  std::string var(VarRef v) const {
    switch (v.kind) {
      case VarRef::Kind::Reg:
        if (cur_ && cur_->localized.count(v)) return local_name(v);
        return "R.r[" + std::to_string(v.index) + "]";
      case VarRef::Kind::Flag:
        if (cur_ && cur_->localized.count(v)) return local_name(v);
        return "R.f[" + std::to_string(v.index) + "]";
      case VarRef::Kind::Temp:
        return "t" + std::to_string(v.index);
      default:
        throw error(errc::internal, "unmapped variable reference");
    }
  }

  // --- fixed sections ----------------------------------------------------

  void prelude() {
    line("/* lifted translation unit; generated by winnow, do not edit */");
    line("#include <ctype.h>");
    line("#include <stdint.h>");
    line("#include <stdio.h>");
    line("#include <stdlib.h>");
    line("#include <string.h>");
    line("");
    line("#define WN_MEM_SIZE " + hexu(opt_.mem_size));
    line("#define WN_STACK_BAND 0x00010000u");
    line("#define WN_TEXT_BASE " + hexu(prog_.text_base));
    line("#define WN_TEXT_END " + hexu(prog_.text_end()));
    line("");
    line("static struct { uint32_t r[16]; uint8_t f[4]; } R;");
    line("static uint8_t M[WN_MEM_SIZE];");
    line("static unsigned char wn_in[65536];");
    line("static size_t wn_in_len, wn_in_pos;");
    line("static uint32_t wn_threads = 1u;");
    line("");
  }

  void runtime() {
    line("void wn_trap(uint32_t code) {");
    line("  fflush(stdout);");
    line("  exit((int)code);");
    line("}");
    line("");
    line("uint32_t wn_ld(uint32_t a) {");
    line("  if ((a & 3u) || a > WN_MEM_SIZE - 4u) wn_trap(98u);");
    line("  return (uint32_t)M[a] | (uint32_t)M[a + 1u] << 8 |");
    line("         (uint32_t)M[a + 2u] << 16 | (uint32_t)M[a + 3u] << 24;");
    line("}");
    line("");
    line("void wn_st(uint32_t a, uint32_t v) {");
    line("  if ((a & 3u) || a > WN_MEM_SIZE - 4u) wn_trap(98u);");
    line("  if (a >= WN_TEXT_BASE && a < WN_TEXT_END) wn_trap(98u);");
    line("  M[a] = (uint8_t)v;");
    line("  M[a + 1u] = (uint8_t)(v >> 8);");
    line("  M[a + 2u] = (uint8_t)(v >> 16);");
    line("  M[a + 3u] = (uint8_t)(v >> 24);");
    line("}");
    line("");
    line("void wn_putint(uint32_t v) { printf(\"%d\\n\", (int)v); }");
    line("");
    line("void wn_putchar(uint32_t v) { putchar((int)(v & 0xffu)); }");
    line("");
    line("uint32_t wn_getint(void) {");
    line("  while (wn_in_pos < wn_in_len && isspace((int)wn_in[wn_in_pos])) wn_in_pos++;");
    line("  size_t p = wn_in_pos;");
    line("  uint32_t acc = 0u, neg = 0u, any = 0u;");
    line("  if (p < wn_in_len && (wn_in[p] == '-' || wn_in[p] == '+')) {");
    line("    neg = wn_in[p] == '-';");
    line("    p++;");
    line("  }");
    line("  while (p < wn_in_len && wn_in[p] >= '0' && wn_in[p] <= '9') {");
    line("    acc = acc * 10u + (uint32_t)(wn_in[p] - '0');");
    line("    any = 1u;");
    line("    p++;");
    line("  }");
    line("  if (!any) return 0u; /* nothing to read: yields 0, consumes nothing */");
    line("  wn_in_pos = p;");
    line("  return neg ? 0u - acc : acc;");
    line("}");
    line("");
    // Spawned entries run to completion at the spawn point; the register
    // file is checkpointed around the call so the parent resumes intact.
    line("uint32_t wn_spawn(uint32_t entry, uint32_t arg) {");
    line("  if (wn_threads >= 8u) wn_trap(98u);");
    line("  uint32_t band = WN_MEM_SIZE - wn_threads * WN_STACK_BAND;");
    line("  if (band < WN_STACK_BAND) wn_trap(98u);");
    line("  uint32_t tid = wn_threads++;");
    line("  uint32_t save_r[16];");
    line("  uint8_t save_f[4];");
    line("  memcpy(save_r, R.r, sizeof save_r);");
    line("  memcpy(save_f, R.f, sizeof save_f);");
    line("  memset(&R, 0, sizeof R);");
    line("  R.r[0] = arg;");
    line("  R.r[14] = 0xfffffff0u;");
    line("  R.r[15] = band;");
    bool first = true;
    for (uint32_t e : sp_.cfg.thread_entries) {
      if (!out_.functions.count(e)) continue;
      line(std::string("  ") + (first ? "if" : "else if") + " (entry == " +
           hexu(e) + ") " + func_name(e) + "();");
      first = false;
    }
    if (first) {
      line("  (void)entry;");
      line("  wn_trap(98u);");
    } else {
      line("  else wn_trap(98u);");
    }
    line("  memcpy(R.r, save_r, sizeof save_r);");
    line("  memcpy(R.f, save_f, sizeof save_f);");
    line("  return tid;");
    line("}");
    line("");
    line("uint32_t wn_join(uint32_t tid) {");
    line("  if (tid == 0u || tid >= wn_threads) wn_trap(98u);");
    line("  return 0u; /* spawned threads already ran to completion */");
    line("}");
    line("");
    line("void wn_exit(uint32_t code) {");
    line("  fflush(stdout);");
    line("  exit((int)(code & 0xffu));");
    line("}");
    line("");
  }

  // --- function bodies ---------------------------------------------------

  void function(const LiftedFunction& f) {
    cur_ = &f;
    std::vector<Block> blocks;
    for (const Block& b : f.blocks) blocks.push_back({b.start, fold_block(b.ops, opt_.mode)});

    std::set<uint32_t> targeted;
    bool prologue_goto = blocks.front().start != f.entry;
    if (prologue_goto) targeted.insert(f.entry);
    int max_temp = -1;
    std::set<VarRef> written, read;
    for (const Block& b : blocks) {
      for (const MicroOp& o : b.ops) {
        if (o.op == Op::DirJump || (o.op == Op::CondJump && o.imm == 0))
          targeted.insert(o.target);
        if (o.op == Op::IjumpDispatch)
          for (uint32_t t : o.targets) targeted.insert(t);
        for (VarRef v : {o.dst, o.a, o.b})
          if (v.kind == VarRef::Kind::Temp) max_temp = std::max(max_temp, (int)v.index);
        collect_vars(o, written, read);
      }
    }

    line("void " + func_name(f.entry) + "(void) {");
    for (VarRef v : f.localized)
      stmt((v.kind == VarRef::Kind::Reg ? "uint32_t " : "uint8_t ") + local_name(v) +
           " = 0u;");
    for (int i = 0; i <= max_temp; i++) stmt("uint32_t t" + std::to_string(i) + " = 0u;");
    // Write-only locals still receive their stores (the lowering is kept
    // uniform); mark them used so the unit compiles silently under -Wextra.
    for (VarRef v : f.localized)
      if (!read.count(v)) stmt("(void)" + local_name(v) + ";");
    if (prologue_goto) stmt("goto " + label_name(f.entry) + ";");
    for (const Block& b : blocks) {
      if (targeted.count(b.start)) line(label_name(b.start) + ":");
      for (const MicroOp& o : b.ops) emit_op(o);
      if (b.ops.empty() || !is_terminal(b.ops.back()))
        stmt("wn_trap(97u); /* resume from a non-returning call */");
    }
    line("}");
    line("");
    cur_ = nullptr;
  }

  // Records which variables an op's emitted form reads and writes, counting
  // only names that appear as such in the C text (marshaled operands count
  // as reads; dispatch tail arms and plain calls touch nothing by name).
  void collect_vars(const MicroOp& o, std::set<VarRef>& written,
                    std::set<VarRef>& read) const {
    auto r = [&](VarRef v) {
      if (v.kind != VarRef::Kind::None) read.insert(v);
    };
    switch (o.op) {
      case Op::Movi: written.insert(o.dst); break;
      case Op::SelectCond:
        written.insert(o.dst);
        switch (o.cond) {  // exactly the flags cond_expr names
          case isa::Cond::EQ:
          case isa::Cond::NE:
            read.insert(lift::flag(lift::kFlagZ));
            break;
          case isa::Cond::LT:
          case isa::Cond::GE:
            read.insert(lift::flag(lift::kFlagN));
            read.insert(lift::flag(lift::kFlagV));
            break;
          case isa::Cond::GT:
          case isa::Cond::LE:
            read.insert(lift::flag(lift::kFlagZ));
            read.insert(lift::flag(lift::kFlagN));
            read.insert(lift::flag(lift::kFlagV));
            break;
        }
        break;
      case Op::SetFlags:
        r(o.a);
        r(o.b);
        for (uint8_t i = 0; i < 4; i++) written.insert(lift::flag(i));
        break;
      case Op::HostCall:
        switch (o.imm) {
          case 1: case 2: r(lift::reg(0)); break;
          case 3: written.insert(lift::reg(0)); break;
          case 4: r(lift::reg(0)); r(lift::reg(1)); written.insert(lift::reg(0)); break;
          case 5: r(lift::reg(0)); written.insert(lift::reg(0)); break;
          default: break;
        }
        break;
      case Op::Exit: r(o.a); break;
      default:
        r(o.a);
        r(o.b);
        if (o.dst.kind != VarRef::Kind::None) written.insert(o.dst);
        break;
    }
  }

  void emit_op(const MicroOp& o) {
    switch (o.op) {
      case Op::Movi: stmt(var(o.dst) + " = " + hexu(o.imm) + ";"); break;
      case Op::Mov: stmt(var(o.dst) + " = " + var(o.a) + ";"); break;
      case Op::Add: binop(o, "+"); break;
      case Op::Sub: binop(o, "-"); break;
      case Op::Mul: binop(o, "*"); break;
      case Op::And: binop(o, "&"); break;
      case Op::Or: binop(o, "|"); break;
      case Op::Xor: binop(o, "^"); break;
      case Op::Shl: shift(o, "<<"); break;
      case Op::Shr: shift(o, ">>"); break;
      case Op::SetFlags: {
        stmt("{");
        stmt("  uint32_t wa = " + var(o.a) + ", wb = " + var(o.b) + ", wd = wa - wb;");
        stmt("  " + var(lift::flag(lift::kFlagN)) + " = (uint8_t)(wd >> 31);");
        stmt("  " + var(lift::flag(lift::kFlagZ)) + " = (uint8_t)(wd == 0u);");
        stmt("  " + var(lift::flag(lift::kFlagC)) + " = (uint8_t)(wa >= wb);");
        stmt("  " + var(lift::flag(lift::kFlagV)) +
             " = (uint8_t)((((wa ^ wb) & (wa ^ wd)) >> 31) & 1u);");
        stmt("}");
        break;
      }
      case Op::SelectCond: stmt(var(o.dst) + " = " + cond_expr(o.cond) + ";"); break;
      case Op::Load:
        stmt(var(o.dst) + " = wn_ld(" + var(o.a) + " + " + hexu(o.imm) + ");");
        break;
      case Op::Store:
        stmt("wn_st(" + var(o.a) + " + " + hexu(o.imm) + ", " + var(o.b) + ");");
        break;
      case Op::HostCall: hostcall(o); break;
      case Op::DirJump: stmt("goto " + label_name(o.target) + ";"); break;
      case Op::CondJump:
        if (o.imm == 0) {
          stmt("if (" + var(o.a) + ") goto " + label_name(o.target) + ";");
        } else if (o.imm == 1) {
          stmt("if (" + var(o.a) + ") {");
          stmt("  " + func_name(o.target) + "();");
          stmt("  return;");
          stmt("}");
        } else {
          stmt("if (" + var(o.a) + ") wn_trap(99u);");
        }
        break;
      case Op::Call: stmt(func_name(o.target) + "();"); break;
      case Op::TailCall:
        stmt(func_name(o.target) + "();");
        stmt("return;");
        break;
      case Op::IcallDispatch:
      case Op::IjumpDispatch: dispatch(o); break;
      case Op::Ret: stmt("return;"); break;
      case Op::Guard: stmt("wn_trap(99u);"); break;
      case Op::Exit: stmt("wn_exit(" + var(o.a) + ");"); break;
    }
  }

  void binop(const MicroOp& o, const char* sym) {
    stmt(var(o.dst) + " = " + var(o.a) + " " + sym + " " + var(o.b) + ";");
  }

  void shift(const MicroOp& o, const char* sym) {
    stmt(var(o.dst) + " = " + var(o.a) + " " + sym + " (" + var(o.b) + " & 31u);");
  }

  std::string cond_expr(isa::Cond c) const {
    std::string n = var(lift::flag(lift::kFlagN)), z = var(lift::flag(lift::kFlagZ)),
                v = var(lift::flag(lift::kFlagV));
    switch (c) {
      case isa::Cond::EQ: return "(uint32_t)(" + z + " != 0u)";
      case isa::Cond::NE: return "(uint32_t)(" + z + " == 0u)";
      case isa::Cond::LT: return "(uint32_t)(" + n + " != " + v + ")";
      case isa::Cond::GE: return "(uint32_t)(" + n + " == " + v + ")";
      case isa::Cond::GT: return "(uint32_t)(" + z + " == 0u && " + n + " == " + v + ")";
      case isa::Cond::LE: return "(uint32_t)(" + z + " != 0u || " + n + " != " + v + ")";
    }
    throw error(errc::internal, "bad condition code");
  }

  void hostcall(const MicroOp& o) {
    std::string r0 = var(lift::reg(0));
    switch (o.imm) {
      case 1: stmt("wn_putint(" + r0 + ");"); break;
      case 2: stmt("wn_putchar(" + r0 + ");"); break;
      case 3: stmt(r0 + " = wn_getint();"); break;
      case 4: stmt(r0 + " = wn_spawn(" + r0 + ", " + var(lift::reg(1)) + ");"); break;
      case 5: stmt(r0 + " = wn_join(" + r0 + ");"); break;
      default: stmt("wn_trap(98u); /* unknown host call */"); break;
    }
  }

  // Arms compare the selector against each recorded target; goto arms come
  // before tail-call arms, each set ascending.  FailSafe traps on a miss;
  // Transparent treats the last arm as the only remaining possibility.
  void dispatch(const MicroOp& o) {
    struct Arm {
      uint32_t value;
      bool tail;
    };
    std::vector<Arm> arms;
    for (uint32_t t : o.targets) arms.push_back({t, false});
    for (uint32_t t : o.call_targets) arms.push_back({t, true});
    if (arms.empty()) {
      stmt("wn_trap(99u);");
      return;
    }
    std::string sel = var(o.a);
    bool fold_last = opt_.mode == GuardMode::Transparent;
    for (size_t i = 0; i < arms.size(); i++) {
      bool last_folded = fold_last && i + 1 == arms.size();
      std::string head;
      if (last_folded && i == 0)
        head = "";
      else if (last_folded)
        head = "else ";
      else if (i == 0)
        head = "if (" + sel + " == " + hexu(arms[i].value) + ") ";
      else
        head = "else if (" + sel + " == " + hexu(arms[i].value) + ") ";
      std::string body;
      if (o.op == Op::IcallDispatch) {
        body = func_name(arms[i].value) + "();";
      } else if (arms[i].tail) {
        body = "{ " + func_name(arms[i].value) + "(); return; }";
      } else {
        body = "goto " + label_name(arms[i].value) + ";";
      }
      stmt(head + body);
    }
    if (!fold_last) stmt("else wn_trap(99u);");
  }

  // --- main ---------------------------------------------------------------

  void emit_main() {
    line("int main(void) {");
    size_t n = prog_.text.size();
    std::string row;
    if (n) {
      line("  static const uint32_t wn_text[" + std::to_string(n) + "] = {");
      for (size_t i = 0; i < n; i++) {
        row += (row.empty() ? "      " : " ") + hexu(prog_.text[i]) + ",";
        if ((i + 1) % 6 == 0) {
          line(row);
          row.clear();
        }
      }
      if (!row.empty()) line(row);
      line("  };");
    }
    if (!prog_.data.empty()) {
      line("  static const uint8_t wn_data[" + std::to_string(prog_.data.size()) + "] = {");
      row.clear();
      for (size_t i = 0; i < prog_.data.size(); i++) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "0x%02x,", prog_.data[i]);
        row += (row.empty() ? "      " : " ") + std::string(buf);
        if ((i + 1) % 12 == 0) {
          line(row);
          row.clear();
        }
      }
      if (!row.empty()) line(row);
      line("  };");
    }
    if (n) {
      stmt("for (size_t i = 0; i < " + std::to_string(n) + "u; i++) {");
      stmt("  uint32_t a = WN_TEXT_BASE + 4u * (uint32_t)i, v = wn_text[i];");
      stmt("  M[a] = (uint8_t)v;");
      stmt("  M[a + 1u] = (uint8_t)(v >> 8);");
      stmt("  M[a + 2u] = (uint8_t)(v >> 16);");
      stmt("  M[a + 3u] = (uint8_t)(v >> 24);");
      stmt("}");
    }
    if (!prog_.data.empty())
      stmt("memcpy(M + " + hexu(prog_.data_base) + ", wn_data, sizeof wn_data);");
    stmt("wn_in_len = fread(wn_in, 1u, sizeof wn_in, stdin);");
    stmt("R.r[14] = 0xfffffff0u;");
    stmt("R.r[15] = WN_MEM_SIZE;");
    stmt(func_name(sp_.cfg.entry) + "();");
    stmt("return (int)(R.r[0] & 0xffu);");
    line("}");
  }

  const structure::StructuredProgram& sp_;
  const isa::Program& prog_;
  const std::vector<LiftedFunction>& funcs_;
  const Options& opt_;
  const LiftedFunction* cur_ = nullptr;
  EmittedSource out_;
};

}  // namespace

EmittedSource emit_source(const structure::StructuredProgram& sp,
                          const isa::Program& prog,
                          const std::vector<LiftedFunction>& funcs,
                          const Options& opt) {
  return Emitter(sp, prog, funcs, opt).run();
}

}  // namespace winnow::emit
