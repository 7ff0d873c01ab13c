#pragma once
// One-call composition of the debloating stages:
//
//   trace (one run per input) -> merge -> build_cfg -> expand ->
//   structure -> lift/localize -> emit source and/or rewrite binary ->
//   combined metrics report
//
// The shared-library API, the CLI and the test harness all call this one
// implementation, so "stage by stage" and "end to end" cannot drift apart.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfg.hpp"
#include "emit.hpp"
#include "isa.hpp"
#include "rewrite.hpp"
#include "structure.hpp"
#include "trace.hpp"
#include "vm.hpp"

namespace winnow::pipeline {

enum class Backend : uint8_t { Source, Rewriter, Both };

const char* backend_name(Backend b);
std::optional<Backend> backend_from_name(const std::string& s);

struct Options {
  cfg::Strategy strategy = cfg::Strategy::DS2;
  emit::GuardMode guard = emit::GuardMode::FailSafe;
  Backend backend = Backend::Both;
  uint32_t mem_size = vm::kDefaultMemSize;
  uint32_t quantum = vm::kDefaultQuantum;
  uint64_t step_limit = vm::kDefaultStepLimit;
};

struct Artifacts {
  trace::TraceSet merged;
  cfg::Cfg graph;  // after expansion
  structure::StructuredProgram sp;
  std::vector<lift::LiftedFunction> functions;  // localized
  std::optional<emit::EmittedSource> source;    // when backend covers Source
  std::optional<isa::Program> rewritten;        // when backend covers Rewriter
  std::string metrics_json;
};

// One traced run with `input` as the whole of stdin.  A run that faults is
// rejected with errc::verify: only well-behaved executions may seed a
// debloating pass.
trace::TraceSet trace_run(const isa::Program& prog, const std::string& input,
                          const Options& opt = {});

// The full composition.  At least one input is required (errc::format).
Artifacts debloat(const isa::Program& prog,
                  const std::vector<std::string>& inputs,
                  const Options& opt = {});

// The combined metrics payload ("kind": "metrics"): coverage over the graph
// plus gadget and size figures for the original and, when present, the
// rewritten binary.  Deterministic byte-for-byte.
std::string metrics_json(const isa::Program& prog, const cfg::Cfg& graph,
                         const std::optional<isa::Program>& rewritten);

}  // namespace winnow::pipeline
