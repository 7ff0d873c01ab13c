#pragma once

// MiniISA: fixed-width 32-bit ISA with 16 registers.
//
// Encoding: the opcode lives in bits [31:24] of every word.  Field layout by
// format (msb..lsb, unused bits must be zero for a word to decode):
//   R      op | rd[23:20] | rs1[19:16] | rs2[15:12] | 0[11:0]
//   I      op | rd[23:20] | rs1[19:16] | simm16[15:0]
//   B.cond op | cond[23:20] | simm20[19:0]
//   B/BL   op | simm24[23:0]
//   BR/BLR op | rs1[23:20] | 0[19:0]
//   SVC    op | 0[23:8] | imm8[7:0]
//
// Branch offsets are in instruction words, relative to the branch's own
// address: target = addr + 4*simm.  CMP is the only flag writer; flags use
// signed comparison semantics for LT/GE/GT/LE.
//
// Registers: r0..r13 plus lr (r14) and sp (r15).  ABI: r0-r3 arguments /
// caller-saved, r0 return value, r4-r11 callee-saved, r12-r13 scratch at
// control transfers (the rewriter may clobber them between blocks), lr
// clobbered by BL/BLR, sp callee-balanced.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace winnow::isa {

enum class Opcode : uint8_t {
  MOVI = 0x01,
  MOV = 0x02,
  ADD = 0x03,
  SUB = 0x04,
  MUL = 0x05,
  AND = 0x06,
  ORR = 0x07,
  XOR = 0x08,
  SHL = 0x09,
  SHR = 0x0A,
  CMP = 0x0B,
  ADDI = 0x0C,
  LDR = 0x10,
  STR = 0x11,
  B = 0x20,
  BCOND = 0x21,
  BL = 0x22,
  BR = 0x23,
  BLR = 0x24,
  RET = 0x25,
  SVC = 0x30,
};

enum class Cond : uint8_t { EQ = 0, NE = 1, LT = 2, GE = 3, GT = 4, LE = 5 };

constexpr int kNumRegs = 16;
constexpr uint8_t kLR = 14;
constexpr uint8_t kSP = 15;

// How an instruction can end a basic block.  Every instruction maps to
// exactly one kind; SVC 0 is the process-exit syscall, every other SVC falls
// through.
enum class TerminatorKind : uint8_t {
  Fallthrough,
  DirectJump,      // B
  DirectCondJump,  // B.cond
  DirectCall,      // BL
  IndirectJump,    // BR
  IndirectCall,    // BLR
  Return,          // RET
  SyscallExit,     // SVC 0
};

const char* terminator_name(TerminatorKind k);
std::optional<TerminatorKind> terminator_from_name(const std::string& s);

struct Instruction {
  Opcode op = Opcode::MOVI;
  uint8_t rd = 0;
  uint8_t rs1 = 0;
  uint8_t rs2 = 0;
  Cond cond = Cond::EQ;
  int32_t imm = 0;  // sign-extended; word offset for branches; 0..255 for SVC

  bool operator==(const Instruction&) const = default;
};

// Returns nullopt when the word does not decode (unknown opcode, nonzero
// unused field, cond out of range).  encode(decode(w)) == w for every word
// that decodes.
std::optional<Instruction> decode(uint32_t word);

// Throws errc::format when a field is out of range for its encoding.
uint32_t encode(const Instruction& ins);

TerminatorKind classify_terminator(const Instruction& ins);

inline bool is_block_terminator(TerminatorKind k) {
  return k != TerminatorKind::Fallthrough;
}

// Target of a direct branch (B, B.cond, BL) located at `addr`.
uint32_t branch_target(uint32_t addr, const Instruction& ins);

const char* mnemonic(Opcode op);
const char* cond_name(Cond c);
std::string reg_name(uint8_t r);

// A loaded MiniISA image: one text segment of instruction words and one data
// segment of raw bytes, both mapped at fixed guest addresses.
struct Program {
  uint32_t entry = 0;
  uint32_t text_base = 0;
  std::vector<uint32_t> text;  // words
  uint32_t data_base = 0;
  std::vector<uint8_t> data;

  uint32_t text_size() const { return (uint32_t)(text.size() * 4); }
  uint32_t text_end() const { return text_base + text_size(); }
  bool contains_text(uint32_t addr) const {
    return addr >= text_base && addr < text_end() && (addr & 3) == 0;
  }
  uint32_t word_at(uint32_t addr) const;  // addr must satisfy contains_text
  std::string text_sha256() const;
};

// Checks alignment, entry placement and segment overlap; throws errc::format.
void validate(const Program& prog);

constexpr uint32_t kDefaultTextBase = 0x1000;

// Two-pass assembler.  Grammar: one statement per line, `label:` prefixes,
// `;` comments, immediates in decimal or 0x-hex, registers r0..r13/lr/sp.
// Directives: .text, .data, .entry <label>, .word v[,...], .byte v[,...],
// .text_base <addr>, .data_base <addr>.  A label used as an immediate
// (MOVI/ADDI) or data word resolves to its absolute address; a bare integer
// in a branch operand is a raw word offset.
Program assemble(const std::string& source, uint32_t text_base = kDefaultTextBase);

// Emits assembly that reassembles to the identical image.  Throws
// errc::format on an undecodable word, reporting its address.
std::string disassemble(const Program& prog);

// MVB container: "MVB1" magic, then u32 little-endian fields version(=1),
// entry, text_base, text_size, data_base, data_size, followed by the raw
// text then data bytes.
std::string save_mvb(const Program& prog);
Program load_mvb(const std::string& bytes);
void save_mvb_file(const Program& prog, const std::string& path);
Program load_mvb_file(const std::string& path);

}  // namespace winnow::isa
