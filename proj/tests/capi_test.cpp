// Exercises the shared-library boundary as an external client would: only
// winnow.h and the standard library, no core headers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <winnow.h>

namespace {

std::string slurp_corpus(const std::string& name) {
  std::ifstream f(std::string(CORPUS_DIR) + "/" + name);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out = s;
  wn_string_free(s);
  return out;
}

wn_program* assemble(const std::string& src) {
  wn_program* p = nullptr;
  REQUIRE(wn_program_assemble(src.c_str(), 0, &p) == WN_OK);
  REQUIRE(p != nullptr);
  return p;
}

// `in` must outlive the returned options (they alias its bytes).
wn_run_options input_opts(const std::string& in) {
  wn_run_options o{};
  o.input = in.c_str();
  o.input_len = in.size();
  return o;
}

std::filesystem::path scratch_dir() {
  auto d = std::filesystem::temp_directory_path() /
           ("winnow_capi_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("version and error text are always available") {
  CHECK(std::string(wn_version()) == "1.0.0");
  CHECK(wn_last_error() != nullptr);
}

TEST_CASE("programs round-trip through assembly, container and disassembly") {
  wn_program* p = assemble(slurp_corpus("evenodd.s"));
  CHECK(wn_program_entry(p) == 0x1000);
  CHECK(wn_program_text_size(p) == 68);
  CHECK(wn_code_size(p) == 68);

  std::string sha = take([&] {
    char* s = nullptr;
    REQUIRE(wn_program_text_sha256(p, &s) == WN_OK);
    return s;
  }());
  CHECK(sha.size() == 64);

  auto dir = scratch_dir();
  std::string mvb = (dir / "evenodd.mvb").string();
  REQUIRE(wn_program_save_mvb(p, mvb.c_str()) == WN_OK);
  wn_program* q = nullptr;
  REQUIRE(wn_program_load_mvb(mvb.c_str(), &q) == WN_OK);
  CHECK(take([&] {
          char* s = nullptr;
          REQUIRE(wn_program_text_sha256(q, &s) == WN_OK);
          return s;
        }()) == sha);
  CHECK(wn_program_entry(q) == wn_program_entry(p));

  char* dis = nullptr;
  REQUIRE(wn_program_disassemble(p, &dis) == WN_OK);
  CHECK(take(dis).find("SVC") != std::string::npos);

  SUBCASE("failures set a status and a message") {
    wn_program* bad = nullptr;
    CHECK(wn_program_assemble(nullptr, 0, &bad) == WN_ERR_ARG);
    CHECK(wn_program_assemble("NOT AN OPCODE", 0, &bad) == WN_ERR_PARSE);
    CHECK(std::string(wn_last_error()).size() > 0);
    CHECK(wn_program_load_mvb("/nonexistent/x.mvb", &bad) == WN_ERR_IO);
    CHECK(bad == nullptr);
  }

  wn_program_free(q);
  wn_program_free(p);
  std::filesystem::remove_all(dir);
}

TEST_CASE("runs report guest output, exit codes and faults") {
  wn_program* p = assemble(slurp_corpus("evenodd.s"));

  std::string in_even = "4";
  wn_run_options even = input_opts(in_even);
  wn_run_result r{};
  REQUIRE(wn_run(p, &even, &r) == WN_OK);
  CHECK(r.faulted == 0);
  CHECK(r.exit_code == 0);
  CHECK(std::string(r.output, r.output_len) == "0\n");
  CHECK(r.fault == nullptr);
  CHECK(r.steps > 0);
  wn_run_result_free(&r);

  std::string in_odd = "7";
  wn_run_options odd = input_opts(in_odd);
  REQUIRE(wn_run(p, &odd, &r) == WN_OK);
  CHECK(std::string(r.output, r.output_len) == "1\n");
  wn_run_result_free(&r);
  wn_program_free(p);

  SUBCASE("a guest fault is data, not an API error") {
    wn_program* f = assemble(R"(.entry main
main:
  MOVI r1, 0
  MOVI r2, 4
  SUB r1, r1, r2
  LDR r0, [r1, 0]
  SVC 0
)");
    wn_run_result fr{};
    REQUIRE(wn_run(f, nullptr, &fr) == WN_OK);
    CHECK(fr.faulted == 1);
    REQUIRE(fr.fault != nullptr);
    CHECK(std::string(fr.fault).find("at 0x") != std::string::npos);
    wn_run_result_free(&fr);

    wn_trace* t = nullptr;
    CHECK(wn_trace_program(f, nullptr, &t) == WN_ERR_VERIFY);
    wn_program_free(f);
  }
}

TEST_CASE("the stage pipeline equals the one-shot composition") {
  wn_program* p = assemble(slurp_corpus("evenodd.s"));
  std::string in = "4";
  wn_run_options opt = input_opts(in);

  wn_trace* t = nullptr;
  REQUIRE(wn_trace_program(p, &opt, &t) == WN_OK);

  char* tj = nullptr;
  REQUIRE(wn_trace_to_json(t, &tj) == WN_OK);
  std::string trace_json = take(tj);
  wn_trace* t2 = nullptr;
  REQUIRE(wn_trace_from_json(trace_json.c_str(), &t2) == WN_OK);

  const wn_trace* both[] = {t, t2};
  wn_trace* merged = nullptr;
  REQUIRE(wn_trace_merge(both, 2, &merged) == WN_OK);

  wn_cfg* c = nullptr;
  REQUIRE(wn_cfg_build(merged, p, &c) == WN_OK);
  wn_cfg* e = nullptr;
  REQUIRE(wn_cfg_expand(c, p, WN_STRATEGY_DS2, &e) == WN_OK);

  char* cj = nullptr;
  REQUIRE(wn_cfg_to_json(e, &cj) == WN_OK);
  std::string cfg_json = take(cj);
  wn_cfg* e2 = nullptr;
  REQUIRE(wn_cfg_from_json(cfg_json.c_str(), &e2) == WN_OK);

  wn_structured* s = nullptr;
  REQUIRE(wn_structure(e2, p, &s) == WN_OK);
  char* sj = nullptr;
  REQUIRE(wn_structured_to_json(s, &sj) == WN_OK);
  std::string structured_json = take(sj);
  wn_structured* s2 = nullptr;
  REQUIRE(wn_structured_from_json(structured_json.c_str(), &s2) == WN_OK);
  CHECK(take([&] {
          char* x = nullptr;
          REQUIRE(wn_structured_to_json(s2, &x) == WN_OK);
          return x;
        }()) == structured_json);

  char* listing = nullptr;
  REQUIRE(wn_lift_listing(s2, p, &listing) == WN_OK);
  CHECK(take(listing).find("func 0x00001000") != std::string::npos);

  char* src = nullptr;
  REQUIRE(wn_emit_source(s2, p, WN_GUARD_FAILSAFE, 0, &src) == WN_OK);
  std::string staged_source = take(src);

  wn_program* rew = nullptr;
  REQUIRE(wn_rewrite(s2, p, WN_GUARD_FAILSAFE, &rew) == WN_OK);
  std::string staged_sha = take([&] {
    char* x = nullptr;
    REQUIRE(wn_program_text_sha256(rew, &x) == WN_OK);
    return x;
  }());

  const char* inputs[] = {"4"};
  size_t lens[] = {1};
  wn_debloat_options dopt{};
  dopt.strategy = WN_STRATEGY_DS2;
  dopt.guard = WN_GUARD_FAILSAFE;
  dopt.backend = WN_BACKEND_BOTH;
  wn_debloat_result dres{};
  REQUIRE(wn_debloat(p, inputs, lens, 1, &dopt, &dres) == WN_OK);
  REQUIRE(dres.source != nullptr);
  REQUIRE(dres.rewritten != nullptr);
  REQUIRE(dres.metrics_json != nullptr);
  CHECK(std::string(dres.source) == staged_source);
  CHECK(take([&] {
          char* x = nullptr;
          REQUIRE(wn_program_text_sha256(dres.rewritten, &x) == WN_OK);
          return x;
        }()) == staged_sha);
  CHECK(std::string(dres.metrics_json).find("\"kind\": \"metrics\"") !=
        std::string::npos);
  wn_debloat_result_free(&dres);

  wn_program_free(rew);
  wn_structured_free(s2);
  wn_structured_free(s);
  wn_cfg_free(e2);
  wn_cfg_free(e);
  wn_cfg_free(c);
  wn_trace_free(merged);
  wn_trace_free(t2);
  wn_trace_free(t);
  wn_program_free(p);
}

TEST_CASE("coverage and gadget reports render both ways") {
  wn_program* p = assemble(slurp_corpus("evenodd.s"));
  std::string in = "4";
  wn_run_options opt = input_opts(in);
  wn_trace* t = nullptr;
  REQUIRE(wn_trace_program(p, &opt, &t) == WN_OK);
  wn_cfg* c = nullptr;
  const wn_trace* one[] = {t};
  wn_trace* merged = nullptr;
  REQUIRE(wn_trace_merge(one, 1, &merged) == WN_OK);
  REQUIRE(wn_cfg_build(merged, p, &c) == WN_OK);

  char* j = nullptr;
  REQUIRE(wn_coverage(c, p, 1, &j) == WN_OK);
  CHECK(take(j).find("\"kind\": \"coverage\"") != std::string::npos);
  REQUIRE(wn_coverage(c, p, 0, &j) == WN_OK);
  CHECK(take(j).find("82.35%") != std::string::npos);

  REQUIRE(wn_gadgets(p, p, 0, 1, &j) == WN_OK);
  CHECK(take(j).find("percent_of_baseline") != std::string::npos);
  REQUIRE(wn_gadgets(p, nullptr, 0, 0, &j) == WN_OK);
  CHECK(take(j).find("unique gadgets") != std::string::npos);

  wn_cfg_free(c);
  wn_trace_free(merged);
  wn_trace_free(t);
  wn_program_free(p);
}
