#include "pipeline.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "metrics.hpp"

namespace winnow::pipeline {

using nlohmann::json;

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Source: return "source";
    case Backend::Rewriter: return "rewriter";
    case Backend::Both: return "both";
  }
  return "?";
}

std::optional<Backend> backend_from_name(const std::string& s) {
  if (s == "source") return Backend::Source;
  if (s == "rewriter") return Backend::Rewriter;
  if (s == "both") return Backend::Both;
  return std::nullopt;
}

trace::TraceSet trace_run(const isa::Program& prog, const std::string& input,
                          const Options& opt) {
  vm::RunOptions ro;
  ro.mem_size = opt.mem_size;
  ro.quantum = opt.quantum;
  ro.step_limit = opt.step_limit;
  ro.input = input;
  ro.collect_trace = true;
  vm::RunResult r = vm::run(prog, ro);
  if (!r.ok())
    throw error(errc::verify, std::string("trace run faulted: ") +
                                  vm::fault_name(r.fault));
  return *r.trace;
}

Artifacts debloat(const isa::Program& prog,
                  const std::vector<std::string>& inputs,
                  const Options& opt) {
  if (inputs.empty())
    throw error(errc::format, "debloat needs at least one traced input");
  Artifacts out;
  std::vector<trace::TraceSet> runs;
  runs.reserve(inputs.size());
  for (const std::string& in : inputs) runs.push_back(trace_run(prog, in, opt));
  out.merged = trace::merge(runs);
  out.graph = cfg::expand(cfg::build_cfg(out.merged, prog), prog, opt.strategy);
  out.sp = structure::structure(out.graph, prog);
  out.functions = lift::lift(out.sp, prog);
  for (lift::LiftedFunction& f : out.functions) f = lift::localize(std::move(f));
  if (opt.backend != Backend::Rewriter) {
    emit::Options eo;
    eo.mode = opt.guard;
    eo.mem_size = opt.mem_size;
    out.source = emit::emit_source(out.sp, prog, out.functions, eo);
  }
  if (opt.backend != Backend::Source)
    out.rewritten = rewrite::rewrite_binary(out.sp, prog, opt.guard);
  out.metrics_json = metrics_json(prog, out.graph, out.rewritten);
  return out;
}

std::string metrics_json(const isa::Program& prog, const cfg::Cfg& graph,
                         const std::optional<isa::Program>& rewritten) {
  auto round2 = [](double p) { return std::round(p * 100.0) / 100.0; };
  json j;
  j["kind"] = "metrics";
  metrics::CoverageReport cov = metrics::coverage(graph, prog);
  j["coverage"]["lifted_instructions"] = cov.lifted_instructions;
  j["coverage"]["total_text_instructions"] = cov.total_text_instructions;
  j["coverage"]["percent"] = round2(cov.percent);
  metrics::GadgetReport orig = metrics::count_gadgets(prog);
  j["gadgets"]["max_len"] = orig.max_len;
  j["gadgets"]["original"] = orig.count;
  j["size"]["original_bytes"] = metrics::code_size(prog);
  if (rewritten) {
    metrics::GadgetReport rew = metrics::count_gadgets_vs(*rewritten, prog);
    j["gadgets"]["rewritten"] = rew.count;
    if (rew.percent_of_baseline)
      j["gadgets"]["percent_of_baseline"] = round2(*rew.percent_of_baseline);
    uint32_t ob = metrics::code_size(prog);
    uint32_t rb = metrics::code_size(*rewritten);
    j["size"]["rewritten_bytes"] = rb;
    j["size"]["percent_of_baseline"] =
        round2(metrics::percent_of_baseline(rb, ob));
  }
  return j.dump(2) + "\n";
}

}  // namespace winnow::pipeline
