#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metrics.hpp"
#include "rewrite.hpp"
#include "vm.hpp"

using namespace winnow;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream f(std::string(CORPUS_DIR) + "/" + name);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

trace::TraceSet traced(const isa::Program& p, const std::string& input) {
  vm::RunOptions o;
  o.input = input;
  o.collect_trace = true;
  vm::RunResult r = vm::run(p, o);
  REQUIRE(r.ok());
  return *r.trace;
}

cfg::Cfg graph_of(const isa::Program& p, const std::vector<std::string>& inputs,
                  cfg::Strategy strat) {
  std::vector<trace::TraceSet> ts;
  for (const std::string& in : inputs) ts.push_back(traced(p, in));
  return cfg::expand(cfg::build_cfg(trace::merge(ts), p), p, strat);
}

// Little-endian bytes of the words [i, i+len), the canonical gadget key.
std::string le_bytes(const std::vector<uint32_t>& text, size_t i, size_t len) {
  std::string s;
  for (size_t k = 0; k < len; ++k) {
    uint32_t w = text[i + k];
    for (int b = 0; b < 4; ++b) s.push_back((char)((w >> (8 * b)) & 0xFF));
  }
  return s;
}

// Independent oracle: enumerate every (start, length) window up to max_len
// and keep the ones where all words decode, nothing but the last instruction
// transfers control, and the last one is an indirect transfer.
std::set<std::string> brute_force_gadgets(const isa::Program& p,
                                          uint32_t max_len) {
  std::set<std::string> out;
  for (size_t s = 0; s < p.text.size(); ++s) {
    for (size_t len = 1; len <= max_len && s + len <= p.text.size(); ++len) {
      bool ok = true;
      for (size_t k = 0; k < len && ok; ++k) {
        auto ins = isa::decode(p.text[s + k]);
        if (!ins) {
          ok = false;
          break;
        }
        isa::TerminatorKind kind = isa::classify_terminator(*ins);
        if (k + 1 < len) {
          ok = kind == isa::TerminatorKind::Fallthrough;
        } else {
          ok = kind == isa::TerminatorKind::Return ||
               kind == isa::TerminatorKind::IndirectJump ||
               kind == isa::TerminatorKind::IndirectCall;
        }
      }
      if (ok) out.insert(le_bytes(p.text, s, len));
    }
  }
  return out;
}

isa::Program raw_text(std::vector<uint32_t> words) {
  isa::Program p;
  p.entry = isa::kDefaultTextBase;
  p.text_base = isa::kDefaultTextBase;
  p.text = std::move(words);
  return p;
}

uint32_t enc(isa::Opcode op, uint8_t rd = 0, uint8_t rs1 = 0, uint8_t rs2 = 0,
             isa::Cond cond = isa::Cond::EQ, int32_t imm = 0) {
  return isa::encode(isa::Instruction{op, rd, rs1, rs2, cond, imm});
}

const char* kIcallSrc = R"(.entry main
main:
  SVC 3
  MOVI r1, 1
  AND r2, r0, r1
  MOVI r3, 0
  CMP r2, r3
  B.NE pick_g
pick_f:
  MOVI r5, fn_f
  B call_it
pick_g:
  MOVI r5, fn_g
call_it:
  BLR r5
  SVC 1
  MOVI r0, 0
  SVC 0
fn_f:
  MOVI r0, 10
  SVC 1
  RET
fn_g:
  MOVI r0, 20
  SVC 1
  RET
)";

}  // namespace

TEST_CASE("coverage reports the lifted share of the text") {
  isa::Program prog = isa::assemble(slurp("evenodd.s"));
  cfg::Cfg c = graph_of(prog, {"4"}, cfg::Strategy::D);

  metrics::CoverageReport r = metrics::coverage(c, prog);
  // Hand count for the even-input trace: main (6 instructions), even (3),
  // print (1) and done (4) execute; odd (3) does not.  17 words of text.
  CHECK(r.lifted_instructions == 14);
  CHECK(r.total_text_instructions == 17);
  CHECK(r.percent == doctest::Approx(100.0 * 14 / 17));
  CHECK(r.percent == cfg::coverage_percent(c, prog));

  SUBCASE("a synthetic four-of-ten graph is exactly 40 percent") {
    std::vector<uint32_t> words;
    for (int i = 0; i < 10; ++i)
      words.push_back(enc(isa::Opcode::MOVI, 0, 0, 0, isa::Cond::EQ, i));
    isa::Program ten = raw_text(std::move(words));
    cfg::Cfg four;
    four.entry = ten.entry;
    four.nodes[0x1000] = cfg::Node{0x1000, 0x100C,
                                   isa::TerminatorKind::Fallthrough,
                                   cfg::Provenance::Dynamic};
    metrics::CoverageReport t = metrics::coverage(four, ten);
    CHECK(t.lifted_instructions == 4);
    CHECK(t.total_text_instructions == 10);
    CHECK(t.percent == 40.0);
  }
}

TEST_CASE("coverage grows monotonically from D through DS1 to DS2") {
  for (const char* name : {"evenodd.s", "evenodd_bl.s"}) {
    CAPTURE(name);
    isa::Program prog = isa::assemble(slurp(name));
    metrics::CoverageReport d =
        metrics::coverage(graph_of(prog, {"4"}, cfg::Strategy::D), prog);
    metrics::CoverageReport ds1 =
        metrics::coverage(graph_of(prog, {"4"}, cfg::Strategy::DS1), prog);
    metrics::CoverageReport ds2 =
        metrics::coverage(graph_of(prog, {"4"}, cfg::Strategy::DS2), prog);
    CHECK(d.lifted_instructions <= ds1.lifted_instructions);
    CHECK(ds1.lifted_instructions <= ds2.lifted_instructions);
    CHECK(d.percent <= ds1.percent);
    CHECK(ds1.percent <= ds2.percent);
    CHECK(ds2.percent <= 100.0);
  }
}

TEST_CASE("dead code caps coverage below 100 percent for every strategy") {
  // `dead` is never executed, never branched to and never guarded, so no
  // strategy can discover it.
  isa::Program prog = isa::assemble(R"(.entry main
main:
  MOVI r0, 0
  SVC 0
dead:
  MOVI r0, 7
  SVC 1
  SVC 0
)");
  for (cfg::Strategy s :
       {cfg::Strategy::D, cfg::Strategy::DS1, cfg::Strategy::DS2}) {
    metrics::CoverageReport r = metrics::coverage(graph_of(prog, {""}, s), prog);
    CHECK(r.lifted_instructions == 2);
    CHECK(r.total_text_instructions == 5);
    CHECK(r.percent == 40.0);
    CHECK(r.percent < 100.0);
  }
}

TEST_CASE("gadget scanning matches the hand-derived suffix census") {
  SUBCASE("add add ret yields the three suffixes") {
    isa::Program p = raw_text({enc(isa::Opcode::ADD, 0, 0, 0),
                               enc(isa::Opcode::ADD, 0, 0, 0),
                               enc(isa::Opcode::RET)});
    metrics::GadgetReport r = metrics::count_gadgets(p);
    CHECK(r.max_len == 6);
    CHECK(r.count == 3);
    CHECK(r.gadgets.count(le_bytes(p.text, 2, 1)) == 1);
    CHECK(r.gadgets.count(le_bytes(p.text, 1, 2)) == 1);
    CHECK(r.gadgets.count(le_bytes(p.text, 0, 3)) == 1);
    CHECK(!r.percent_of_baseline.has_value());
  }

  SUBCASE("text without an indirect transfer has no gadgets") {
    isa::Program p = isa::assemble(slurp("evenodd.s"));
    CHECK(metrics::count_gadgets(p).count == 0);
  }

  SUBCASE("identical byte runs at different addresses count once") {
    isa::Program p = raw_text({enc(isa::Opcode::ADD, 1, 2, 3),
                               enc(isa::Opcode::RET),
                               enc(isa::Opcode::ADD, 1, 2, 3),
                               enc(isa::Opcode::RET)});
    CHECK(metrics::count_gadgets(p).count == 2);  // [RET] and [ADD; RET]
  }

  SUBCASE("max_len bounds the window") {
    std::vector<uint32_t> words(7, enc(isa::Opcode::ADD, 0, 0, 0));
    words.push_back(enc(isa::Opcode::RET));
    isa::Program p = raw_text(std::move(words));
    CHECK(metrics::count_gadgets(p, 6).count == 6);
    CHECK(metrics::count_gadgets(p, 8).count == 8);
    CHECK(metrics::count_gadgets(p, 1).count == 1);
  }

  SUBCASE("any intervening control transfer invalidates the window") {
    // Direct branches, calls and the exit syscall all break the run; a
    // plain syscall does not.
    isa::Program p = raw_text({enc(isa::Opcode::B, 0, 0, 0, isa::Cond::EQ, 1),
                               enc(isa::Opcode::RET)});
    CHECK(metrics::count_gadgets(p).count == 1);
    isa::Program q =
        raw_text({enc(isa::Opcode::SVC, 0, 0, 0, isa::Cond::EQ, 0),
                  enc(isa::Opcode::RET)});
    CHECK(metrics::count_gadgets(q).count == 1);
    isa::Program r =
        raw_text({enc(isa::Opcode::SVC, 0, 0, 0, isa::Cond::EQ, 1),
                  enc(isa::Opcode::RET)});
    CHECK(metrics::count_gadgets(r).count == 2);
  }

  SUBCASE("BR and BLR terminate gadgets like RET") {
    isa::Program p = raw_text({enc(isa::Opcode::MOV, 1, 2),
                               enc(isa::Opcode::BR, 0, 3)});
    CHECK(metrics::count_gadgets(p).count == 2);
    isa::Program q = raw_text({enc(isa::Opcode::MOV, 1, 2),
                               enc(isa::Opcode::BLR, 0, 3)});
    CHECK(metrics::count_gadgets(q).count == 2);
  }

  SUBCASE("an undecodable word terminates scanning at that point") {
    isa::Program p = raw_text({enc(isa::Opcode::ADD, 0, 0, 0), 0xFFFFFFFFu,
                               enc(isa::Opcode::ADD, 1, 1, 1),
                               enc(isa::Opcode::RET)});
    metrics::GadgetReport r = metrics::count_gadgets(p);
    CHECK(r.count == 2);  // [RET] and [ADD; RET]; nothing crosses the hole
    CHECK(r.gadgets == brute_force_gadgets(p, 6));
  }
}

TEST_CASE("the scanner agrees with brute-force window enumeration") {
  SUBCASE("corpus programs and their rewritten forms") {
    std::vector<isa::Program> progs;
    progs.push_back(isa::assemble(slurp("evenodd.s")));
    progs.push_back(isa::assemble(slurp("evenodd_bl.s")));
    progs.push_back(isa::assemble(kIcallSrc));
    // Rewritten binaries are chain-heavy and RET-rich, a good stress case.
    {
      isa::Program icall = isa::assemble(kIcallSrc);
      std::vector<trace::TraceSet> ts{traced(icall, "0"), traced(icall, "1")};
      cfg::Cfg c = cfg::build_cfg(trace::merge(ts), icall);
      structure::StructuredProgram sp = structure::structure(c, icall);
      progs.push_back(rewrite::rewrite_binary(sp, icall,
                                              emit::GuardMode::FailSafe));
    }
    for (size_t i = 0; i < progs.size(); ++i) {
      CAPTURE(i);
      metrics::GadgetReport r = metrics::count_gadgets(progs[i]);
      CHECK(r.gadgets == brute_force_gadgets(progs[i], 6));
      CHECK(r.count == r.gadgets.size());
    }
  }

  SUBCASE("random word soup") {
    std::mt19937 rng(0xC0FFEE);
    auto word = [&]() -> uint32_t {
      auto r = [&](uint32_t n) { return (uint32_t)(rng() % n); };
      switch (r(12)) {
        case 0: return enc(isa::Opcode::MOVI, (uint8_t)r(16), 0, 0,
                           isa::Cond::EQ, (int32_t)r(2000) - 1000);
        case 1: return enc(isa::Opcode::ADD, (uint8_t)r(16), (uint8_t)r(16),
                           (uint8_t)r(16));
        case 2: return enc(isa::Opcode::CMP, 0, (uint8_t)r(16),
                           (uint8_t)r(16));
        case 3: return enc(isa::Opcode::LDR, (uint8_t)r(16), (uint8_t)r(16),
                           0, isa::Cond::EQ, (int32_t)r(64));
        case 4: return enc(isa::Opcode::B, 0, 0, 0, isa::Cond::EQ,
                           (int32_t)r(200) - 100);
        case 5: return enc(isa::Opcode::BCOND, 0, 0, 0, (isa::Cond)r(6),
                           (int32_t)r(200) - 100);
        case 6: return enc(isa::Opcode::BL, 0, 0, 0, isa::Cond::EQ,
                           (int32_t)r(200) - 100);
        case 7: return enc(isa::Opcode::BR, 0, (uint8_t)r(16));
        case 8: return enc(isa::Opcode::BLR, 0, (uint8_t)r(16));
        case 9: return enc(isa::Opcode::RET);
        case 10: return enc(isa::Opcode::SVC, 0, 0, 0, isa::Cond::EQ,
                            (int32_t)r(6));
        default: return rng();  // often undecodable
      }
    };
    for (int iter = 0; iter < 200; ++iter) {
      std::vector<uint32_t> words;
      size_t n = 1 + rng() % 120;
      for (size_t i = 0; i < n; ++i) words.push_back(word());
      isa::Program p = raw_text(std::move(words));
      uint32_t max_len = 1 + rng() % 8;
      metrics::GadgetReport r = metrics::count_gadgets(p, max_len);
      REQUIRE(r.gadgets == brute_force_gadgets(p, max_len));
    }
  }
}

TEST_CASE("baseline percentages are internally consistent") {
  CHECK(metrics::percent_of_baseline(0, 0) == 100.0);
  CHECK(metrics::percent_of_baseline(7, 7) == 100.0);
  CHECK(metrics::percent_of_baseline(1, 4) == 25.0);
  CHECK(metrics::percent_of_baseline(3, 4) == 75.0);
  CHECK_THROWS_AS((void)metrics::percent_of_baseline(1, 0), winnow::error);

  isa::Program icall = isa::assemble(kIcallSrc);
  metrics::GadgetReport self = metrics::count_gadgets_vs(icall, icall);
  REQUIRE(self.percent_of_baseline.has_value());
  CHECK(*self.percent_of_baseline == 100.0);

  // A program with no gadgets compared against itself is still 100%.
  isa::Program even = isa::assemble(slurp("evenodd.s"));
  metrics::GadgetReport empty = metrics::count_gadgets_vs(even, even);
  CHECK(empty.count == 0);
  REQUIRE(empty.percent_of_baseline.has_value());
  CHECK(*empty.percent_of_baseline == 100.0);

  SUBCASE("rewriting a partially covered binary does not add gadgets") {
    std::vector<trace::TraceSet> ts{traced(icall, "0")};  // fn_g never runs
    cfg::Cfg c = cfg::build_cfg(trace::merge(ts), icall);
    structure::StructuredProgram sp = structure::structure(c, icall);
    isa::Program rew =
        rewrite::rewrite_binary(sp, icall, emit::GuardMode::FailSafe);
    REQUIRE(cfg::coverage_percent(c, icall) < 100.0);
    metrics::GadgetReport r = metrics::count_gadgets_vs(rew, icall);
    CHECK(r.count <= metrics::count_gadgets(icall).count);
    REQUIRE(r.percent_of_baseline.has_value());
    CHECK(*r.percent_of_baseline <= 100.0);
  }
}

TEST_CASE("code size measures the text segment") {
  CHECK(metrics::code_size(isa::Program{}) == 0);
  isa::Program even = isa::assemble(slurp("evenodd.s"));
  CHECK(metrics::code_size(even) == 68);  // 17 instructions
}

TEST_CASE("reports serialize to json and tables") {
  isa::Program prog = isa::assemble(slurp("evenodd.s"));
  cfg::Cfg c = graph_of(prog, {"4"}, cfg::Strategy::D);
  metrics::CoverageReport cov = metrics::coverage(c, prog);

  nlohmann::json jc = nlohmann::json::parse(metrics::to_json(cov));
  CHECK(jc["kind"] == "coverage");
  CHECK(jc["lifted_instructions"] == 14);
  CHECK(jc["total_text_instructions"] == 17);
  CHECK(jc["percent"].get<double>() == doctest::Approx(82.35));

  std::string tc = metrics::to_table(cov);
  CHECK(tc.find("82.35%") != std::string::npos);
  CHECK(tc.find("14") != std::string::npos);

  isa::Program addret = raw_text({enc(isa::Opcode::ADD, 0, 0, 0),
                                  enc(isa::Opcode::ADD, 0, 0, 0),
                                  enc(isa::Opcode::RET)});
  metrics::GadgetReport g = metrics::count_gadgets_vs(addret, addret);
  nlohmann::json jg = nlohmann::json::parse(metrics::to_json(g));
  CHECK(jg["kind"] == "gadgets");
  CHECK(jg["max_len"] == 6);
  CHECK(jg["count"] == 3);
  REQUIRE(jg["gadgets"].is_array());
  CHECK(jg["gadgets"].size() == 3);
  // Little-endian bytes, hex encoded: a bare RET is 00 00 00 25.
  bool has_ret = false;
  for (const auto& s : jg["gadgets"])
    if (s == "00000025") has_ret = true;
  CHECK(has_ret);
  CHECK(jg["percent_of_baseline"].get<double>() == 100.0);

  metrics::GadgetReport plain = metrics::count_gadgets(addret);
  nlohmann::json jp = nlohmann::json::parse(metrics::to_json(plain));
  CHECK(jp.find("percent_of_baseline") == jp.end());

  std::string tg = metrics::to_table(g);
  CHECK(tg.find("100.00%") != std::string::npos);
  CHECK(tg.find("3") != std::string::npos);

  CHECK(metrics::percent_str(100.0) == "100.00");
  CHECK(metrics::percent_str(1400.0 / 17) == "82.35");
  CHECK(metrics::percent_str(200.0 / 3) == "66.67");
}
