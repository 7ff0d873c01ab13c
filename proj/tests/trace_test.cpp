#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "trace.hpp"

using namespace winnow;
using trace::BlockRecord;
using trace::TraceSet;
using isa::TerminatorKind;

namespace {

BlockRecord block(uint32_t start, uint32_t end, TerminatorKind term,
                  std::set<uint32_t> succs) {
  return BlockRecord{start, end, term, std::move(succs)};
}

void add(TraceSet& t, BlockRecord b) { t.blocks.emplace(b.start, std::move(b)); }

// The two runs of the parity example: the even path takes one side of the
// conditional, the odd path the other, and both rejoin at the epilogue.
TraceSet even_run() {
  TraceSet t;
  t.text_sha256 = "d1";
  add(t, block(0x1000, 0x1014, TerminatorKind::DirectCondJump, {0x1018}));
  add(t, block(0x1018, 0x1020, TerminatorKind::DirectJump, {0x1034}));
  add(t, block(0x1034, 0x1040, TerminatorKind::SyscallExit, {}));
  t.runs.push_back({"in-even", 1000});
  return t;
}

TraceSet odd_run() {
  TraceSet t;
  t.text_sha256 = "d1";
  add(t, block(0x1000, 0x1014, TerminatorKind::DirectCondJump, {0x1024}));
  add(t, block(0x1024, 0x102c, TerminatorKind::Fallthrough, {0x1030}));
  add(t, block(0x1030, 0x1030, TerminatorKind::Fallthrough, {0x1034}));
  add(t, block(0x1034, 0x1040, TerminatorKind::SyscallExit, {}));
  t.runs.push_back({"in-odd", 1000});
  return t;
}

}  // namespace

TEST_CASE("merge unions successors and keeps the partition") {
  TraceSet m = trace::merge({even_run(), odd_run()});
  CHECK(m.blocks.size() == 5);
  CHECK(m.blocks.at(0x1000).succs == std::set<uint32_t>{0x1018, 0x1024});
  CHECK(m.blocks.at(0x1018).succs == std::set<uint32_t>{0x1034});
  CHECK(m.blocks.at(0x1034).succs.empty());
  CHECK(m.runs.size() == 2);
  CHECK(m.runs[0].input_sha256 == "in-even");
  CHECK(m.runs[1].input_sha256 == "in-odd");
}

TEST_CASE("merge splits blocks at boundaries discovered in other runs") {
  // Run A straight-lines a loop body from its head; run B enters the same
  // body in the middle (the indirect branch at 0x100c saw both targets).
  TraceSet a;
  a.text_sha256 = "d2";
  add(a, block(0x1000, 0x100c, TerminatorKind::IndirectJump, {0x1000}));
  a.indirect[0x100c] = {0x1000};
  a.runs.push_back({"ia", 1000});

  TraceSet b;
  b.text_sha256 = "d2";
  add(b, block(0x1008, 0x100c, TerminatorKind::IndirectJump, {0x1008}));
  b.indirect[0x100c] = {0x1008};
  b.runs.push_back({"ib", 1000});

  TraceSet m = trace::merge({a, b});
  REQUIRE(m.blocks.size() == 2);
  CHECK(m.blocks.at(0x1000) ==
        block(0x1000, 0x1004, TerminatorKind::Fallthrough, {0x1008}));
  CHECK(m.blocks.at(0x1008) ==
        block(0x1008, 0x100c, TerminatorKind::IndirectJump, {0x1000, 0x1008}));
  CHECK(m.indirect.at(0x100c) == std::set<uint32_t>{0x1000, 0x1008});

  SUBCASE("absorbing an already-merged part changes nothing") {
    CHECK(trace::merge({m, a}) == m);
    CHECK(trace::merge({m, b}) == m);
    CHECK(trace::merge({m}) == m);
  }
}

TEST_CASE("merge is idempotent, commutative and associative") {
  TraceSet a = even_run(), b = odd_run();
  TraceSet c;
  c.text_sha256 = "d1";
  add(c, block(0x1000, 0x1014, TerminatorKind::DirectCondJump, {0x1024}));
  add(c, block(0x1024, 0x102c, TerminatorKind::Fallthrough, {0x1030}));
  add(c, block(0x1030, 0x1030, TerminatorKind::Fallthrough, {0x1034}));
  add(c, block(0x1034, 0x1040, TerminatorKind::SyscallExit, {}));
  c.thread_entries.insert(0x1024);
  c.runs.push_back({"in-odd", 500});

  CHECK(trace::merge({a}) == a);
  CHECK(trace::merge({a, a}) == a);
  CHECK(trace::merge({a, b}) == trace::merge({b, a}));
  CHECK(trace::merge({trace::merge({a, b}), c}) ==
        trace::merge({a, trace::merge({b, c})}));
  CHECK(trace::merge({a, b, c}) == trace::merge({c, b, a}));
}

TEST_CASE("merge rejects traces of different binaries") {
  TraceSet a = even_run();
  TraceSet b = odd_run();
  b.text_sha256 = "something-else";
  CHECK_THROWS_AS(trace::merge({a, b}), error);
}

TEST_CASE("merge rejects contradictory block bounds") {
  // Same start, but one run claims the block straight-lines through the
  // address where the other saw a terminator: impossible for one binary.
  TraceSet a;
  a.text_sha256 = "d3";
  add(a, block(0x1000, 0x100c, TerminatorKind::DirectJump, {0x1000}));
  a.runs.push_back({"ia", 1000});
  TraceSet b;
  b.text_sha256 = "d3";
  add(b, block(0x1000, 0x1008, TerminatorKind::DirectJump, {0x1000}));
  b.runs.push_back({"ib", 1000});
  CHECK_THROWS_AS(trace::merge({a, b}), error);
}

TEST_CASE("validate catches structural damage") {
  TraceSet t = even_run();
  CHECK_NOTHROW(trace::validate(t));

  SUBCASE("dangling successor") {
    t.blocks.at(0x1018).succs.insert(0x2000);
    CHECK_THROWS_AS(trace::validate(t), error);
  }
  SUBCASE("dangling indirect target") {
    t.indirect[0x1014] = {0x9000};
    CHECK_THROWS_AS(trace::validate(t), error);
  }
  SUBCASE("dangling thread entry") {
    t.thread_entries.insert(0x4000);
    CHECK_THROWS_AS(trace::validate(t), error);
  }
  SUBCASE("overlapping blocks") {
    add(t, block(0x1008, 0x1020, TerminatorKind::DirectJump, {0x1034}));
    CHECK_THROWS_AS(trace::validate(t), error);
  }
  SUBCASE("jump block without successors") {
    t.blocks.at(0x1018).succs.clear();
    CHECK_THROWS_AS(trace::validate(t), error);
  }
  SUBCASE("a return that ended a thread may have no successors") {
    add(t, block(0x1044, 0x1044, TerminatorKind::Return, {}));
    t.blocks.at(0x1018).succs.insert(0x1044);
    CHECK_NOTHROW(trace::validate(t));
  }
}

TEST_CASE("JSON round-trip is exact and canonical") {
  TraceSet m = trace::merge({even_run(), odd_run()});
  m.thread_entries.insert(0x1018);
  m.indirect[0x1014] = {0x1018, 0x1024};

  std::string s = trace::to_json(m);
  CHECK(trace::from_json(s) == m);
  CHECK(trace::to_json(trace::from_json(s)) == s);
  // Addresses are fixed-width hex so the file is greppable and diffable.
  CHECK(s.find("\"0x00001018\"") != std::string::npos);
  CHECK(s.find("\"kind\": \"trace\"") != std::string::npos);
}

TEST_CASE("from_json rejects malformed input") {
  TraceSet m = even_run();
  std::string good = trace::to_json(m);

  CHECK_THROWS_AS(trace::from_json("not json at all"), error);
  CHECK_THROWS_AS(trace::from_json("{}"), error);

  std::string wrong_kind = good;
  wrong_kind.replace(wrong_kind.find("\"trace\""), 7, "\"cfgxx\"");
  CHECK_THROWS_AS(trace::from_json(wrong_kind), error);

  std::string bad_term = good;
  bad_term.replace(bad_term.find("\"condjump\""), 10, "\"sidejump\"");
  CHECK_THROWS_AS(trace::from_json(bad_term), error);
}

TEST_CASE("file round-trip and digest pinning") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "winnow-trace-test";
  fs::create_directories(dir);
  std::string path = (dir / "t.trace.json").string();

  TraceSet m = trace::merge({even_run(), odd_run()});
  trace::save_file(m, path);
  CHECK(trace::load_file(path) == m);
  CHECK(trace::load_file(path, std::string("d1")) == m);
  CHECK_THROWS_AS(trace::load_file(path, std::string("d9")), error);
  CHECK_THROWS_AS(trace::load_file((dir / "missing.json").string()), error);
  fs::remove_all(dir);
}
