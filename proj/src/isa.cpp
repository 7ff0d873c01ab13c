#include "isa.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace winnow::isa {

namespace {

int32_t sext(uint32_t v, int bits) {
  uint32_t m = 1u << (bits - 1);
  v &= (1u << bits) - 1;
  return (int32_t)((v ^ m) - m);
}

bool fits_simm(int64_t v, int bits) {
  int64_t lo = -(int64_t(1) << (bits - 1));
  int64_t hi = (int64_t(1) << (bits - 1)) - 1;
  return v >= lo && v <= hi;
}

uint32_t align_up(uint32_t v, uint32_t a) { return (v + a - 1) & ~(a - 1); }

}  // namespace

const char* terminator_name(TerminatorKind k) {
  switch (k) {
    case TerminatorKind::Fallthrough: return "fallthrough";
    case TerminatorKind::DirectJump: return "jump";
    case TerminatorKind::DirectCondJump: return "condjump";
    case TerminatorKind::DirectCall: return "call";
    case TerminatorKind::IndirectJump: return "ijump";
    case TerminatorKind::IndirectCall: return "icall";
    case TerminatorKind::Return: return "ret";
    case TerminatorKind::SyscallExit: return "exit";
  }
  return "?";
}

std::optional<TerminatorKind> terminator_from_name(const std::string& s) {
  static const std::map<std::string, TerminatorKind> table = {
      {"fallthrough", TerminatorKind::Fallthrough},
      {"jump", TerminatorKind::DirectJump},
      {"condjump", TerminatorKind::DirectCondJump},
      {"call", TerminatorKind::DirectCall},
      {"ijump", TerminatorKind::IndirectJump},
      {"icall", TerminatorKind::IndirectCall},
      {"ret", TerminatorKind::Return},
      {"exit", TerminatorKind::SyscallExit},
  };
  auto it = table.find(s);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::optional<Instruction> decode(uint32_t w) {
  Instruction ins;
  uint8_t op = (uint8_t)(w >> 24);
  uint8_t f0 = (w >> 20) & 0xF;  // rd or cond or BR/BLR register
  uint8_t f1 = (w >> 16) & 0xF;  // rs1
  uint8_t f2 = (w >> 12) & 0xF;  // rs2
  switch ((Opcode)op) {
    case Opcode::MOVI:
      if (f1 != 0 || false) return std::nullopt;
      ins = {Opcode::MOVI, f0, 0, 0, Cond::EQ, sext(w, 16)};
      break;
    case Opcode::MOV:
      if ((w & 0xFFFF) != 0) return std::nullopt;
      ins = {Opcode::MOV, f0, f1, 0, Cond::EQ, 0};
      break;
    case Opcode::ADD:
    case Opcode::SUB:
    case Opcode::MUL:
    case Opcode::AND:
    case Opcode::ORR:
    case Opcode::XOR:
    case Opcode::SHL:
    case Opcode::SHR:
      if ((w & 0xFFF) != 0) return std::nullopt;
      ins = {(Opcode)op, f0, f1, f2, Cond::EQ, 0};
      break;
    case Opcode::CMP:
      if (f0 != 0 || (w & 0xFFF) != 0) return std::nullopt;
      ins = {Opcode::CMP, 0, f1, f2, Cond::EQ, 0};
      break;
    case Opcode::ADDI:
    case Opcode::LDR:
    case Opcode::STR:
      ins = {(Opcode)op, f0, f1, 0, Cond::EQ, sext(w, 16)};
      break;
    case Opcode::B:
    case Opcode::BL:
      ins = {(Opcode)op, 0, 0, 0, Cond::EQ, sext(w, 24)};
      break;
    case Opcode::BCOND:
      if (f0 > 5) return std::nullopt;
      ins = {Opcode::BCOND, 0, 0, 0, (Cond)f0, sext(w, 20)};
      break;
    case Opcode::BR:
    case Opcode::BLR:
      if ((w & 0xFFFFF) != 0) return std::nullopt;
      ins = {(Opcode)op, 0, f0, 0, Cond::EQ, 0};
      break;
    case Opcode::RET:
      if ((w & 0xFFFFFF) != 0) return std::nullopt;
      ins = {Opcode::RET, 0, 0, 0, Cond::EQ, 0};
      break;
    case Opcode::SVC:
      if ((w & 0xFFFF00) != 0) return std::nullopt;
      ins = {Opcode::SVC, 0, 0, 0, Cond::EQ, (int32_t)(w & 0xFF)};
      break;
    default:
      return std::nullopt;
  }
  return ins;
}

uint32_t encode(const Instruction& ins) {
  auto reg = [](uint8_t r) {
    if (r >= kNumRegs) throw error(errc::format, "register out of range");
    return (uint32_t)r;
  };
  auto simm = [&](int bits) {
    if (!fits_simm(ins.imm, bits))
      throw error(errc::format, "immediate " + std::to_string(ins.imm) +
                                    " does not fit simm" + std::to_string(bits));
    return (uint32_t)ins.imm & ((1u << bits) - 1);
  };
  uint32_t w = (uint32_t)ins.op << 24;
  switch (ins.op) {
    case Opcode::MOVI:
      return w | reg(ins.rd) << 20 | simm(16);
    case Opcode::MOV:
      return w | reg(ins.rd) << 20 | reg(ins.rs1) << 16;
    case Opcode::ADD:
    case Opcode::SUB:
    case Opcode::MUL:
    case Opcode::AND:
    case Opcode::ORR:
    case Opcode::XOR:
    case Opcode::SHL:
    case Opcode::SHR:
      return w | reg(ins.rd) << 20 | reg(ins.rs1) << 16 | reg(ins.rs2) << 12;
    case Opcode::CMP:
      return w | reg(ins.rs1) << 16 | reg(ins.rs2) << 12;
    case Opcode::ADDI:
    case Opcode::LDR:
    case Opcode::STR:
      return w | reg(ins.rd) << 20 | reg(ins.rs1) << 16 | simm(16);
    case Opcode::B:
    case Opcode::BL:
      return w | simm(24);
    case Opcode::BCOND:
      return w | (uint32_t)ins.cond << 20 | simm(20);
    case Opcode::BR:
    case Opcode::BLR:
      return w | reg(ins.rs1) << 20;
    case Opcode::RET:
      return w;
    case Opcode::SVC:
      if (ins.imm < 0 || ins.imm > 255)
        throw error(errc::format, "svc number out of range");
      return w | (uint32_t)ins.imm;
  }
  throw error(errc::internal, "unknown opcode");
}

TerminatorKind classify_terminator(const Instruction& ins) {
  switch (ins.op) {
    case Opcode::B: return TerminatorKind::DirectJump;
    case Opcode::BCOND: return TerminatorKind::DirectCondJump;
    case Opcode::BL: return TerminatorKind::DirectCall;
    case Opcode::BR: return TerminatorKind::IndirectJump;
    case Opcode::BLR: return TerminatorKind::IndirectCall;
    case Opcode::RET: return TerminatorKind::Return;
    case Opcode::SVC:
      return ins.imm == 0 ? TerminatorKind::SyscallExit : TerminatorKind::Fallthrough;
    default:
      return TerminatorKind::Fallthrough;
  }
}

uint32_t branch_target(uint32_t addr, const Instruction& ins) {
  switch (ins.op) {
    case Opcode::B:
    case Opcode::BL:
    case Opcode::BCOND:
      return addr + 4u * (uint32_t)ins.imm;
    default:
      throw error(errc::internal, "branch_target on non-direct branch");
  }
}

const char* mnemonic(Opcode op) {
  switch (op) {
    case Opcode::MOVI: return "MOVI";
    case Opcode::MOV: return "MOV";
    case Opcode::ADD: return "ADD";
    case Opcode::SUB: return "SUB";
    case Opcode::MUL: return "MUL";
    case Opcode::AND: return "AND";
    case Opcode::ORR: return "ORR";
    case Opcode::XOR: return "XOR";
    case Opcode::SHL: return "SHL";
    case Opcode::SHR: return "SHR";
    case Opcode::CMP: return "CMP";
    case Opcode::ADDI: return "ADDI";
    case Opcode::LDR: return "LDR";
    case Opcode::STR: return "STR";
    case Opcode::B: return "B";
    case Opcode::BCOND: return "B";  // printed as B.<cond>
    case Opcode::BL: return "BL";
    case Opcode::BR: return "BR";
    case Opcode::BLR: return "BLR";
    case Opcode::RET: return "RET";
    case Opcode::SVC: return "SVC";
  }
  return "?";
}

const char* cond_name(Cond c) {
  switch (c) {
    case Cond::EQ: return "EQ";
    case Cond::NE: return "NE";
    case Cond::LT: return "LT";
    case Cond::GE: return "GE";
    case Cond::GT: return "GT";
    case Cond::LE: return "LE";
  }
  return "?";
}

std::string reg_name(uint8_t r) {
  if (r == kLR) return "lr";
  if (r == kSP) return "sp";
  return "r" + std::to_string(r);
}

uint32_t Program::word_at(uint32_t addr) const {
  if (!contains_text(addr)) throw error(errc::internal, "word_at outside text");
  return text[(addr - text_base) / 4];
}

std::string Program::text_sha256() const {
  std::string bytes;
  bytes.reserve(text.size() * 4);
  for (uint32_t w : text) {
    bytes.push_back((char)(w & 0xFF));
    bytes.push_back((char)((w >> 8) & 0xFF));
    bytes.push_back((char)((w >> 16) & 0xFF));
    bytes.push_back((char)((w >> 24) & 0xFF));
  }
  return sha256_hex(bytes);
}

void validate(const Program& prog) {
  if (prog.text.empty()) throw error(errc::format, "empty text segment");
  if (prog.text_base & 3) throw error(errc::format, "unaligned text base");
  if (prog.data_base & 3) throw error(errc::format, "unaligned data base");
  if (!prog.contains_text(prog.entry))
    throw error(errc::format, "entry " + hex32(prog.entry) + " not in text");
  uint32_t te = prog.text_end();
  uint32_t de = prog.data_base + (uint32_t)prog.data.size();
  if (!prog.data.empty() && prog.data_base < te && prog.text_base < de)
    throw error(errc::format, "text and data segments overlap");
}

// ---------------------------------------------------------------------------
// Assembler

namespace {

struct Operand {
  enum Kind { Reg, Int, Label, Mem } kind;
  uint8_t reg = 0;
  int64_t value = 0;
  std::string label;
  // Mem: [base, #off]
  uint8_t base = 0;
  int64_t off = 0;
};

struct Statement {
  int line = 0;
  std::string mnem;  // uppercased, includes ".cond" suffix for B.cond
  std::vector<Operand> ops;
  uint32_t addr = 0;
};

struct DataItem {
  int line = 0;
  bool word = false;  // else byte
  bool is_label = false;
  int64_t value = 0;
  std::string label;
  uint32_t addr = 0;
};

[[noreturn]] void fail(int line, const std::string& msg) {
  throw error(errc::parse, "line " + std::to_string(line) + ": " + msg);
}

std::string upper(std::string s) {
  for (char& c : s) c = (char)std::toupper((unsigned char)c);
  return s;
}

std::string lower(std::string s) {
  for (char& c : s) c = (char)std::tolower((unsigned char)c);
  return s;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_label_char(char c) { return std::isalnum((unsigned char)c) || c == '_' || c == '.'; }

bool parse_int(const std::string& tok, int64_t* out) {
  std::string t = tok;
  bool neg = false;
  if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
    neg = t[0] == '-';
    t = t.substr(1);
  }
  if (t.empty()) return false;
  int base = 10;
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    t = t.substr(2);
  }
  int64_t v = 0;
  for (char c : t) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (base == 16 && c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (base == 16 && c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else return false;
    v = v * base + d;
    if (v > 0x100000000LL) return false;
  }
  *out = neg ? -v : v;
  return true;
}

std::optional<uint8_t> parse_reg(const std::string& tok) {
  std::string t = lower(trim(tok));
  if (t == "lr") return kLR;
  if (t == "sp") return kSP;
  if (t.size() >= 2 && t[0] == 'r') {
    int64_t n;
    if (parse_int(t.substr(1), &n) && n >= 0 && n < kNumRegs) return (uint8_t)n;
  }
  return std::nullopt;
}

// Splits on top-level commas (not inside brackets).
std::vector<std::string> split_operands(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '[') depth++;
    if (c == ']') depth--;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

Operand parse_operand(int line, const std::string& tok) {
  Operand op;
  if (!tok.empty() && tok[0] == '[') {
    if (tok.back() != ']') fail(line, "unterminated memory operand: " + tok);
    std::string inner = tok.substr(1, tok.size() - 2);
    auto parts = split_operands(inner);
    if (parts.empty() || parts.size() > 2) fail(line, "bad memory operand: " + tok);
    auto base = parse_reg(parts[0]);
    if (!base) fail(line, "bad base register: " + parts[0]);
    op.kind = Operand::Mem;
    op.base = *base;
    op.off = 0;
    if (parts.size() == 2) {
      std::string imm = parts[1];
      if (!imm.empty() && imm[0] == '#') imm = imm.substr(1);
      if (!parse_int(imm, &op.off)) fail(line, "bad memory offset: " + parts[1]);
    }
    return op;
  }
  if (auto r = parse_reg(tok)) {
    op.kind = Operand::Reg;
    op.reg = *r;
    return op;
  }
  std::string t = tok;
  if (!t.empty() && t[0] == '#') t = t.substr(1);
  int64_t v;
  if (parse_int(t, &v)) {
    op.kind = Operand::Int;
    op.value = v;
    return op;
  }
  if (!t.empty() && std::all_of(t.begin(), t.end(), is_label_char) &&
      !std::isdigit((unsigned char)t[0])) {
    op.kind = Operand::Label;
    op.label = t;
    return op;
  }
  fail(line, "cannot parse operand: " + tok);
}

struct AsmContext {
  std::map<std::string, uint32_t> labels;
  int64_t resolve(int line, const Operand& op) const {
    if (op.kind == Operand::Int) return op.value;
    if (op.kind == Operand::Label) {
      auto it = labels.find(op.label);
      if (it == labels.end()) fail(line, "undefined label: " + op.label);
      return it->second;
    }
    fail(line, "expected immediate or label");
  }
};

}  // namespace

Program assemble(const std::string& source, uint32_t text_base) {
  Program prog;
  prog.text_base = text_base;
  std::vector<Statement> stmts;
  std::vector<DataItem> data_items;  // .data section contents
  std::vector<DataItem> raw_words;   // .word entries placed in text slots
  std::map<std::string, uint32_t> labels;  // resolved in pass 2 adjustment
  std::vector<std::pair<std::string, std::pair<bool, uint32_t>>> pending_labels;
  std::string entry_label;
  int entry_line = 0;
  std::optional<uint32_t> custom_text_base, custom_data_base;

  // Pass 1: layout.  Text offsets are words from text_base; data offsets are
  // bytes from data_base (resolved once text size is known).
  bool in_data = false;
  uint32_t text_words = 0, data_bytes = 0;
  std::istringstream ss(source);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    line_no++;
    std::string line = raw;
    size_t sc = line.find(';');
    if (sc != std::string::npos) line = line.substr(0, sc);
    line = trim(line);
    // Labels: any number of `name:` prefixes.
    for (;;) {
      size_t i = 0;
      while (i < line.size() && is_label_char(line[i])) i++;
      if (i == 0 || i >= line.size() || line[i] != ':') break;
      std::string name = line.substr(0, i);
      if (std::isdigit((unsigned char)name[0])) fail(line_no, "bad label: " + name);
      if (labels.count(name)) fail(line_no, "duplicate label: " + name);
      labels[name] = 0;  // placeholder
      pending_labels.push_back({name, {in_data, in_data ? data_bytes : text_words}});
      line = trim(line.substr(i + 1));
    }
    if (line.empty()) continue;

    // First token.
    size_t sp = line.find_first_of(" \t");
    std::string head = line.substr(0, sp);
    std::string rest = sp == std::string::npos ? "" : trim(line.substr(sp));
    std::string uhead = upper(head);

    if (uhead == ".TEXT") { in_data = false; continue; }
    if (uhead == ".DATA") { in_data = true; continue; }
    if (uhead == ".ENTRY") {
      if (rest.empty()) fail(line_no, ".entry needs a label");
      entry_label = rest;
      entry_line = line_no;
      continue;
    }
    if (uhead == ".TEXT_BASE" || uhead == ".DATA_BASE") {
      int64_t v;
      if (!parse_int(rest, &v) || v < 0 || (v & 3)) fail(line_no, "bad base address");
      if (uhead == ".TEXT_BASE") custom_text_base = (uint32_t)v;
      else custom_data_base = (uint32_t)v;
      continue;
    }
    if (uhead == ".WORD" || uhead == ".BYTE") {
      bool word = uhead == ".WORD";
      if (!word && !in_data) fail(line_no, ".byte only allowed in .data");
      for (const std::string& tok : split_operands(rest)) {
        DataItem it;
        it.line = line_no;
        it.word = word;
        int64_t v;
        if (parse_int(tok, &v)) {
          it.value = v;
        } else if (word) {
          it.is_label = true;
          it.label = tok;
        } else {
          fail(line_no, "bad .byte value: " + tok);
        }
        if (in_data) {
          it.addr = data_bytes;
          data_items.push_back(it);
          data_bytes += word ? 4 : 1;
        } else {
          // Raw word placed in a text slot.
          it.addr = text_words;
          raw_words.push_back(it);
          text_words++;
        }
      }
      continue;
    }
    if (uhead[0] == '.') fail(line_no, "unknown directive: " + head);
    if (in_data) fail(line_no, "instruction in .data section");

    Statement st;
    st.line = line_no;
    st.mnem = uhead;
    st.addr = text_words;
    for (const std::string& tok : split_operands(rest))
      st.ops.push_back(parse_operand(line_no, tok));
    stmts.push_back(st);
    text_words++;
  }

  if (custom_text_base) prog.text_base = *custom_text_base;
  uint32_t text_end = prog.text_base + text_words * 4;
  prog.data_base = custom_data_base ? *custom_data_base : align_up(text_end, 0x100);

  AsmContext ctx;
  for (auto& [name, where] : pending_labels) {
    auto [is_data, off] = where;
    ctx.labels[name] = is_data ? prog.data_base + off : prog.text_base + off * 4;
  }

  prog.entry = prog.text_base;
  if (!entry_label.empty()) {
    auto it = ctx.labels.find(entry_label);
    if (it == ctx.labels.end()) fail(entry_line, "undefined entry label: " + entry_label);
    prog.entry = it->second;
  }

  // Pass 2: encode.
  prog.text.assign(text_words, 0);
  prog.data.assign(data_bytes, 0);

  auto want = [](const Statement& st, size_t n) {
    if (st.ops.size() != n)
      fail(st.line, std::string(st.mnem) + ": expected " + std::to_string(n) + " operands");
  };
  auto as_reg = [](const Statement& st, size_t i) {
    if (st.ops[i].kind != Operand::Reg) fail(st.line, "operand must be a register");
    return st.ops[i].reg;
  };

  auto resolve_item = [&](const DataItem& it) -> int64_t {
    if (!it.is_label) return it.value;
    auto li = ctx.labels.find(it.label);
    if (li == ctx.labels.end()) fail(it.line, "undefined label: " + it.label);
    return li->second;
  };

  for (const auto& it : raw_words) {
    int64_t v = resolve_item(it);
    if (v < INT32_MIN || v > (int64_t)UINT32_MAX) fail(it.line, ".word out of range");
    prog.text[it.addr] = (uint32_t)(uint64_t)v;
  }

  for (const auto& st : stmts) {
    uint32_t addr = prog.text_base + st.addr * 4;
    Instruction ins;
    auto imm_or_label = [&](size_t i, int bits) {
      int64_t v = ctx.resolve(st.line, st.ops[i]);
      if (!fits_simm(v, bits))
        fail(st.line, "immediate " + std::to_string(v) + " does not fit simm" +
                          std::to_string(bits));
      return (int32_t)v;
    };
    auto branch_imm = [&](size_t i, int bits) {
      // Labels resolve to (target - addr)/4; bare integers are raw word
      // offsets.
      int64_t off;
      if (st.ops[i].kind == Operand::Label) {
        int64_t target = ctx.resolve(st.line, st.ops[i]);
        off = (target - (int64_t)addr) / 4;
        if ((target - (int64_t)addr) % 4 != 0) fail(st.line, "unaligned branch target");
      } else if (st.ops[i].kind == Operand::Int) {
        off = st.ops[i].value;
      } else {
        fail(st.line, "branch operand must be a label or word offset");
      }
      if (!fits_simm(off, bits))
        fail(st.line, "branch offset " + std::to_string(off) + " does not fit simm" +
                          std::to_string(bits));
      return (int32_t)off;
    };

    const std::string& m = st.mnem;
    if (m == "MOVI") {
      want(st, 2);
      ins = {Opcode::MOVI, as_reg(st, 0), 0, 0, Cond::EQ, imm_or_label(1, 16)};
    } else if (m == "MOV") {
      want(st, 2);
      ins = {Opcode::MOV, as_reg(st, 0), as_reg(st, 1), 0, Cond::EQ, 0};
    } else if (m == "ADD" || m == "SUB" || m == "MUL" || m == "AND" || m == "ORR" ||
               m == "XOR" || m == "SHL" || m == "SHR") {
      want(st, 3);
      Opcode op = m == "ADD"   ? Opcode::ADD
                  : m == "SUB" ? Opcode::SUB
                  : m == "MUL" ? Opcode::MUL
                  : m == "AND" ? Opcode::AND
                  : m == "ORR" ? Opcode::ORR
                  : m == "XOR" ? Opcode::XOR
                  : m == "SHL" ? Opcode::SHL
                               : Opcode::SHR;
      ins = {op, as_reg(st, 0), as_reg(st, 1), as_reg(st, 2), Cond::EQ, 0};
    } else if (m == "CMP") {
      want(st, 2);
      ins = {Opcode::CMP, 0, as_reg(st, 0), as_reg(st, 1), Cond::EQ, 0};
    } else if (m == "ADDI") {
      want(st, 3);
      ins = {Opcode::ADDI, as_reg(st, 0), as_reg(st, 1), 0, Cond::EQ, imm_or_label(2, 16)};
    } else if (m == "LDR" || m == "STR") {
      want(st, 2);
      if (st.ops[1].kind != Operand::Mem) fail(st.line, m + " needs a [base, #off] operand");
      if (!fits_simm(st.ops[1].off, 16)) fail(st.line, "memory offset does not fit simm16");
      ins = {m == "LDR" ? Opcode::LDR : Opcode::STR, as_reg(st, 0), st.ops[1].base, 0,
             Cond::EQ, (int32_t)st.ops[1].off};
    } else if (m == "B" || m == "BL") {
      want(st, 1);
      ins = {m == "B" ? Opcode::B : Opcode::BL, 0, 0, 0, Cond::EQ, branch_imm(0, 24)};
    } else if (m.size() > 2 && m[0] == 'B' && m[1] == '.') {
      want(st, 1);
      std::string cn = m.substr(2);
      Cond c;
      if (cn == "EQ") c = Cond::EQ;
      else if (cn == "NE") c = Cond::NE;
      else if (cn == "LT") c = Cond::LT;
      else if (cn == "GE") c = Cond::GE;
      else if (cn == "GT") c = Cond::GT;
      else if (cn == "LE") c = Cond::LE;
      else fail(st.line, "unknown condition: " + cn);
      ins = {Opcode::BCOND, 0, 0, 0, c, branch_imm(0, 20)};
    } else if (m == "BR" || m == "BLR") {
      want(st, 1);
      ins = {m == "BR" ? Opcode::BR : Opcode::BLR, 0, as_reg(st, 0), 0, Cond::EQ, 0};
    } else if (m == "RET") {
      want(st, 0);
      ins = {Opcode::RET, 0, 0, 0, Cond::EQ, 0};
    } else if (m == "SVC") {
      want(st, 1);
      int64_t v = ctx.resolve(st.line, st.ops[0]);
      if (v < 0 || v > 255) fail(st.line, "svc number out of range");
      ins = {Opcode::SVC, 0, 0, 0, Cond::EQ, (int32_t)v};
    } else {
      fail(st.line, "unknown mnemonic: " + m);
    }
    try {
      prog.text[st.addr] = encode(ins);
    } catch (const error& e) {
      fail(st.line, e.what());
    }
  }

  for (const auto& it : data_items) {
    int64_t v = resolve_item(it);
    if (it.word) {
      if (v < INT32_MIN || v > (int64_t)UINT32_MAX) fail(it.line, ".word out of range");
      uint32_t u = (uint32_t)(uint64_t)v;
      for (int i = 0; i < 4; i++) prog.data[it.addr + i] = (uint8_t)(u >> (8 * i));
    } else {
      if (v < 0 || v > 255) fail(it.line, ".byte out of range");
      prog.data[it.addr] = (uint8_t)v;
    }
  }

  validate(prog);
  return prog;
}

// ---------------------------------------------------------------------------
// Disassembler

std::string disassemble(const Program& prog) {
  std::vector<Instruction> insns(prog.text.size());
  for (size_t i = 0; i < prog.text.size(); i++) {
    auto d = decode(prog.text[i]);
    if (!d)
      throw error(errc::format, "undecodable word " + hex32(prog.text[i]) + " at " +
                                    hex32(prog.text_base + (uint32_t)i * 4));
    insns[i] = *d;
  }

  std::set<uint32_t> label_addrs;
  for (size_t i = 0; i < insns.size(); i++) {
    const Instruction& ins = insns[i];
    if (ins.op == Opcode::B || ins.op == Opcode::BL || ins.op == Opcode::BCOND) {
      uint32_t t = branch_target(prog.text_base + (uint32_t)i * 4, ins);
      if (prog.contains_text(t)) label_addrs.insert(t);
    }
  }
  if (prog.entry != prog.text_base) label_addrs.insert(prog.entry);

  auto label_of = [&](uint32_t addr) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "L_%04x", addr);
    return std::string(buf);
  };

  std::ostringstream out;
  if (prog.text_base != kDefaultTextBase)
    out << ".text_base " << hex32(prog.text_base) << "\n";
  {
    uint32_t derived = align_up(prog.text_end(), 0x100);
    if (!prog.data.empty() && prog.data_base != derived)
      out << ".data_base " << hex32(prog.data_base) << "\n";
  }
  if (prog.entry != prog.text_base) out << ".entry " << label_of(prog.entry) << "\n";

  for (size_t i = 0; i < insns.size(); i++) {
    uint32_t addr = prog.text_base + (uint32_t)i * 4;
    if (label_addrs.count(addr)) out << label_of(addr) << ":\n";
    const Instruction& ins = insns[i];
    out << "        ";
    switch (ins.op) {
      case Opcode::MOVI:
        out << "MOVI " << reg_name(ins.rd) << ", " << ins.imm;
        break;
      case Opcode::MOV:
        out << "MOV " << reg_name(ins.rd) << ", " << reg_name(ins.rs1);
        break;
      case Opcode::ADD:
      case Opcode::SUB:
      case Opcode::MUL:
      case Opcode::AND:
      case Opcode::ORR:
      case Opcode::XOR:
      case Opcode::SHL:
      case Opcode::SHR:
        out << mnemonic(ins.op) << " " << reg_name(ins.rd) << ", " << reg_name(ins.rs1)
            << ", " << reg_name(ins.rs2);
        break;
      case Opcode::CMP:
        out << "CMP " << reg_name(ins.rs1) << ", " << reg_name(ins.rs2);
        break;
      case Opcode::ADDI:
        out << "ADDI " << reg_name(ins.rd) << ", " << reg_name(ins.rs1) << ", " << ins.imm;
        break;
      case Opcode::LDR:
      case Opcode::STR:
        out << mnemonic(ins.op) << " " << reg_name(ins.rd) << ", [" << reg_name(ins.rs1);
        if (ins.imm != 0) out << ", #" << ins.imm;
        out << "]";
        break;
      case Opcode::B:
      case Opcode::BL: {
        uint32_t t = branch_target(addr, ins);
        out << mnemonic(ins.op) << " ";
        if (prog.contains_text(t)) out << label_of(t);
        else out << ins.imm;
        break;
      }
      case Opcode::BCOND: {
        uint32_t t = branch_target(addr, ins);
        out << "B." << cond_name(ins.cond) << " ";
        if (prog.contains_text(t)) out << label_of(t);
        else out << ins.imm;
        break;
      }
      case Opcode::BR:
      case Opcode::BLR:
        out << mnemonic(ins.op) << " " << reg_name(ins.rs1);
        break;
      case Opcode::RET:
        out << "RET";
        break;
      case Opcode::SVC:
        out << "SVC " << ins.imm;
        break;
    }
    out << "\n";
  }

  if (!prog.data.empty()) {
    out << ".data\n";
    size_t i = 0;
    while (i + 4 <= prog.data.size()) {
      uint32_t v = (uint32_t)prog.data[i] | (uint32_t)prog.data[i + 1] << 8 |
                   (uint32_t)prog.data[i + 2] << 16 | (uint32_t)prog.data[i + 3] << 24;
      out << "        .word " << hex32(v) << "\n";
      i += 4;
    }
    for (; i < prog.data.size(); i++)
      out << "        .byte " << (int)prog.data[i] << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// MVB container

namespace {

void put_u32(std::string& s, uint32_t v) {
  s.push_back((char)(v & 0xFF));
  s.push_back((char)((v >> 8) & 0xFF));
  s.push_back((char)((v >> 16) & 0xFF));
  s.push_back((char)((v >> 24) & 0xFF));
}

uint32_t get_u32(const std::string& s, size_t off) {
  return (uint32_t)(uint8_t)s[off] | (uint32_t)(uint8_t)s[off + 1] << 8 |
         (uint32_t)(uint8_t)s[off + 2] << 16 | (uint32_t)(uint8_t)s[off + 3] << 24;
}

}  // namespace

std::string save_mvb(const Program& prog) {
  std::string out = "MVB1";
  put_u32(out, 1);
  put_u32(out, prog.entry);
  put_u32(out, prog.text_base);
  put_u32(out, prog.text_size());
  put_u32(out, prog.data_base);
  put_u32(out, (uint32_t)prog.data.size());
  for (uint32_t w : prog.text) put_u32(out, w);
  out.append((const char*)prog.data.data(), prog.data.size());
  return out;
}

Program load_mvb(const std::string& bytes) {
  if (bytes.size() < 28 || bytes.compare(0, 4, "MVB1") != 0)
    throw error(errc::format, "not an MVB image");
  if (get_u32(bytes, 4) != 1) throw error(errc::format, "unsupported MVB version");
  Program prog;
  prog.entry = get_u32(bytes, 8);
  prog.text_base = get_u32(bytes, 12);
  uint32_t text_size = get_u32(bytes, 16);
  prog.data_base = get_u32(bytes, 20);
  uint32_t data_size = get_u32(bytes, 24);
  if (text_size % 4 != 0) throw error(errc::format, "text size not word-aligned");
  if (bytes.size() != 28u + text_size + data_size)
    throw error(errc::format, "MVB size mismatch");
  prog.text.resize(text_size / 4);
  for (size_t i = 0; i < prog.text.size(); i++) prog.text[i] = get_u32(bytes, 28 + i * 4);
  prog.data.resize(data_size);
  std::memcpy(prog.data.data(), bytes.data() + 28 + text_size, data_size);
  validate(prog);
  return prog;
}

void save_mvb_file(const Program& prog, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open for writing: " + path);
  std::string bytes = save_mvb(prog);
  f.write(bytes.data(), (std::streamsize)bytes.size());
  if (!f) throw error(errc::io, "write failed: " + path);
}

Program load_mvb_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return load_mvb(ss.str());
}

}  // namespace winnow::isa
