#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "isa.hpp"

using namespace winnow;
using namespace winnow::isa;

TEST_CASE("known encodings") {
  Program p = assemble("MOVI r0, 5\n");
  CHECK(p.text.size() == 1);
  CHECK(p.text[0] == 0x01000005);

  p = assemble("RET\n");
  CHECK(p.text[0] == 0x25000000);

  p = assemble("loop: B loop\n");
  CHECK(p.text[0] == 0x20000000);
}

TEST_CASE("decode rejects junk in unused fields") {
  CHECK(!decode(0x25000001));            // RET with nonzero low bits
  CHECK(!decode(0x02100100));            // MOV with bits below rs1
  CHECK(!decode(0x21600000));            // B.cond with cond == 6
  CHECK(!decode(0xFF000000));            // unknown opcode
  CHECK(!decode(0x30010000));            // SVC with nonzero middle bits
  CHECK(decode(0x01000005).has_value());
}

TEST_CASE("encode/decode bijection on random decodable words") {
  // Oracle: for any word that decodes, re-encoding reproduces it exactly,
  // and encodings of decoded instructions decode back to the same fields.
  std::mt19937 rng(12345);
  int decoded = 0;
  for (int i = 0; i < 2000000; i++) {
    uint32_t w = rng();
    auto d = decode(w);
    if (!d) continue;
    decoded++;
    CHECK(encode(*d) == w);
    auto d2 = decode(encode(*d));
    REQUIRE(d2.has_value());
    CHECK(*d2 == *d);
  }
  CHECK(decoded > 1000);  // sanity: sampling actually hit valid space
}

TEST_CASE("terminator classification is total and maps exactly six opcodes") {
  int non_fallthrough_opcodes = 0;
  for (int op = 0; op < 256; op++) {
    // Probe with the all-zero-fields instruction of each opcode.
    uint32_t w = (uint32_t)op << 24;
    auto d = decode(w);
    if (!d) continue;
    TerminatorKind k = classify_terminator(*d);
    if (k != TerminatorKind::Fallthrough && k != TerminatorKind::SyscallExit)
      non_fallthrough_opcodes++;
  }
  CHECK(non_fallthrough_opcodes == 6);  // B, B.cond, BL, BR, BLR, RET

  // SVC 0 exits, every other SVC falls through.
  Instruction svc0{Opcode::SVC, 0, 0, 0, Cond::EQ, 0};
  Instruction svc1{Opcode::SVC, 0, 0, 0, Cond::EQ, 1};
  CHECK(classify_terminator(svc0) == TerminatorKind::SyscallExit);
  CHECK(classify_terminator(svc1) == TerminatorKind::Fallthrough);
}

TEST_CASE("branch target arithmetic is word-relative to the branch") {
  Instruction bl{Opcode::BL, 0, 0, 0, Cond::EQ, 8};
  CHECK(branch_target(0x1000, bl) == 0x1020);
  Instruction back{Opcode::B, 0, 0, 0, Cond::EQ, -3};
  CHECK(branch_target(0x1014, back) == 0x1008);
  Instruction self{Opcode::B, 0, 0, 0, Cond::EQ, 0};
  CHECK(branch_target(0x1000, self) == 0x1000);
}

static const char* kSample = R"(
; sample covering every instruction form
        .entry main
main:   MOVI r0, 5
        MOVI r1, -3
        MOV  r2, r0
        ADD  r3, r0, r1
        SUB  r4, r0, r1
        MUL  r5, r0, r1
        AND  r6, r0, r1
        ORR  r7, r0, r1
        XOR  r8, r0, r1
        SHL  r9, r0, r1
        SHR  r10, r0, r1
        CMP  r0, r1
        ADDI r11, r0, 100
        MOVI r12, buf
        LDR  r13, [r12]
        STR  r13, [r12, #4]
        B.EQ skip
        BL   fn
skip:   B    end
fn:     BLR  r12
        BR   r12
        RET
end:    MOVI r0, 0
        SVC  0
        .data
buf:    .word 0x11223344, end
        .byte 7, 8
)";

TEST_CASE("assemble/disassemble round trip reproduces the image") {
  Program p = assemble(kSample);
  CHECK(p.text_base == 0x1000);
  CHECK(p.entry == 0x1000);
  CHECK(p.data_base == 0x1100);  // 24 words of text end at 0x1060, rounded up
  CHECK(p.data.size() == 10);
  // .word label resolves to an absolute address (little-endian bytes).
  uint32_t end_addr = (uint32_t)p.data[4] | (uint32_t)p.data[5] << 8 |
                      (uint32_t)p.data[6] << 16 | (uint32_t)p.data[7] << 24;
  CHECK(end_addr == 0x1058);

  std::string text = disassemble(p);
  Program p2 = assemble(text);
  CHECK(p2.text == p.text);
  CHECK(p2.data == p.data);
  CHECK(p2.entry == p.entry);
  CHECK(p2.text_base == p.text_base);
  CHECK(p2.data_base == p.data_base);
}

TEST_CASE("disassembler reports undecodable words with their address") {
  Program p = assemble("MOVI r0, 1\n.word 0xffffffff\nSVC 0\n");
  CHECK(p.text.size() == 3);
  CHECK_THROWS_WITH_AS((void)disassemble(p), doctest::Contains("0x00001004"), error);
}

TEST_CASE("mvb round trip") {
  Program p = assemble(kSample);
  std::string bytes = save_mvb(p);
  CHECK(bytes.compare(0, 4, "MVB1") == 0);
  Program q = load_mvb(bytes);
  CHECK(q.text == p.text);
  CHECK(q.data == p.data);
  CHECK(q.entry == p.entry);
  CHECK(q.text_base == p.text_base);
  CHECK(q.data_base == p.data_base);
  CHECK(save_mvb(q) == bytes);

  // Truncated and corrupted images are rejected.
  CHECK_THROWS_AS((void)load_mvb(bytes.substr(0, 20)), error);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS((void)load_mvb(bad), error);
}

TEST_CASE("assembler reports errors with line numbers") {
  CHECK_THROWS_WITH_AS((void)assemble("MOVI r0, 1\nFROB r1\n"),
                       doctest::Contains("line 2"), error);
  CHECK_THROWS_WITH_AS((void)assemble("B nowhere\n"), doctest::Contains("line 1"), error);
  CHECK_THROWS_WITH_AS((void)assemble("MOVI r0, 99999\n"),
                       doctest::Contains("simm16"), error);
  CHECK_THROWS_WITH_AS((void)assemble("MOVI r16, 1\n"), doctest::Contains("line 1"),
                       error);
}

TEST_CASE("register aliases and sign handling") {
  Program p = assemble("MOV sp, lr\nADDI sp, sp, -8\n");
  auto i0 = decode(p.text[0]);
  REQUIRE(i0);
  CHECK(i0->rd == 15);
  CHECK(i0->rs1 == 14);
  auto i1 = decode(p.text[1]);
  REQUIRE(i1);
  CHECK(i1->imm == -8);
}
