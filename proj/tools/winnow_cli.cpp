// winnow — pipeline driver over the public C API.
//
// Every stage reads and writes canonical artifacts (MVB containers, JSON
// documents), so any subcommand chain can be reproduced, diffed and
// resumed from files.  `debloat` runs the whole chain in one call and is
// byte-identical to running the stages individually.
//
// Exit codes: 0 success, 1 usage error, 2 pipeline error.  `run` is the
// exception: a clean guest execution exits with the guest's own code
// (reported on stderr to keep it distinct from the CLI's own failures).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <winnow.h>

namespace {

namespace fs = std::filesystem;

// A stage failed; the message already names the stage.
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// The invocation itself is wrong (missing conditional requirement, ...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(wn_status st, const std::string& stage) {
  if (st != WN_OK)
    throw PipelineError(stage + ": " + wn_last_error());
}

std::string slurp(const std::string& path, const std::string& stage) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PipelineError(stage + ": cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// path "-" (or empty where stdout is the default) writes to stdout.
void spit(const std::string& path, const std::string& data,
          const std::string& stage) {
  if (path.empty() || path == "-") {
    std::fwrite(data.data(), 1, data.size(), stdout);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw PipelineError(stage + ": cannot open for writing: " + path);
  f.write(data.data(), (std::streamsize)data.size());
  if (!f) throw PipelineError(stage + ": write failed: " + path);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  wn_string_free(s);
  return out;
}

// RAII over the C handles.
using ProgPtr = std::unique_ptr<wn_program, decltype(&wn_program_free)>;
using TracePtr = std::unique_ptr<wn_trace, decltype(&wn_trace_free)>;
using CfgPtr = std::unique_ptr<wn_cfg, decltype(&wn_cfg_free)>;
using StructPtr = std::unique_ptr<wn_structured, decltype(&wn_structured_free)>;

ProgPtr load_program(const std::string& path, const std::string& stage) {
  wn_program* p = nullptr;
  check(wn_program_load_mvb(path.c_str(), &p), stage);
  return ProgPtr(p, wn_program_free);
}

TracePtr trace_from_file(const std::string& path, const std::string& stage) {
  wn_trace* t = nullptr;
  check(wn_trace_from_json(slurp(path, stage).c_str(), &t), stage);
  return TracePtr(t, wn_trace_free);
}

CfgPtr cfg_from_file(const std::string& path, const std::string& stage) {
  wn_cfg* c = nullptr;
  check(wn_cfg_from_json(slurp(path, stage).c_str(), &c), stage);
  return CfgPtr(c, wn_cfg_free);
}

StructPtr structured_from_file(const std::string& path,
                               const std::string& stage) {
  wn_structured* s = nullptr;
  check(wn_structured_from_json(slurp(path, stage).c_str(), &s), stage);
  return StructPtr(s, wn_structured_free);
}

std::string kind_of(const std::string& json_text, const std::string& stage) {
  try {
    return nlohmann::json::parse(json_text).value("kind", "");
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(stage + ": bad JSON artifact: " + e.what());
  }
}

// Shared vm knobs; 0 keeps the library default, the env var supplies the
// memory size when the flag is absent.
struct VmFlags {
  uint32_t mem_size = 0;
  uint32_t quantum = 0;
  uint64_t step_limit = 0;
  std::string input_path;

  void attach(CLI::App* cmd, bool with_input) {
    cmd->add_option("--mem-size", mem_size,
                    "guest memory size in bytes (default 1 MiB)")
        ->envname("WINNOW_MEM_SIZE");
    cmd->add_option("--quantum", quantum, "scheduler quantum in steps");
    cmd->add_option("--step-limit", step_limit, "total step budget");
    if (with_input)
      cmd->add_option("--input", input_path,
                      "file whose bytes become the guest's stdin");
  }

  wn_run_options options(std::string* storage,
                         const std::string& stage) const {
    wn_run_options o{};
    o.mem_size = mem_size;
    o.quantum = quantum;
    o.step_limit = step_limit;
    if (!input_path.empty()) {
      *storage = slurp(input_path, stage);
      o.input = storage->data();
      o.input_len = storage->size();
    }
    return o;
  }
};

const std::map<std::string, int> kStrategies{
    {"d", WN_STRATEGY_D}, {"ds1", WN_STRATEGY_DS1}, {"ds2", WN_STRATEGY_DS2}};
const std::map<std::string, int> kGuards{
    {"failsafe", WN_GUARD_FAILSAFE}, {"transparent", WN_GUARD_TRANSPARENT}};
const std::map<std::string, int> kBackends{{"source", WN_BACKEND_SOURCE},
                                           {"rewriter", WN_BACKEND_REWRITER},
                                           {"both", WN_BACKEND_BOTH}};

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  fs::path out = p.parent_path() / p.stem();
  return out.string() + suffix;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"winnow — trace-guided binary debloater for MiniISA images"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value configuration file ([section] per subcommand; "
                 "command-line flags win");
  int rc = 0;

  // --- asm --------------------------------------------------------------
  auto* asm_cmd =
      app.add_subcommand("asm", "assemble a .s source into an MVB image");
  asm_cmd->configurable();
  auto asm_src = std::make_shared<std::string>();
  auto asm_out = std::make_shared<std::string>();
  auto asm_base = std::make_shared<uint32_t>(0);
  asm_cmd->add_option("source", *asm_src, "assembly source file")->required();
  asm_cmd->add_option("-o,--output", *asm_out,
                      "output image (default: source with .mvb)");
  asm_cmd->add_option("--text-base", *asm_base, "load address of .text");
  asm_cmd->callback([=]() {
    wn_program* p = nullptr;
    check(wn_program_assemble(slurp(*asm_src, "asm").c_str(), *asm_base, &p),
          "asm");
    ProgPtr prog(p, wn_program_free);
    std::string out =
        asm_out->empty() ? with_suffix(*asm_src, ".mvb") : *asm_out;
    check(wn_program_save_mvb(prog.get(), out.c_str()), "asm");
  });

  // --- dis --------------------------------------------------------------
  auto* dis_cmd = app.add_subcommand("dis", "disassemble an MVB image");
  dis_cmd->configurable();
  auto dis_prog = std::make_shared<std::string>();
  auto dis_out = std::make_shared<std::string>();
  dis_cmd->add_option("program", *dis_prog, "MVB image")->required();
  dis_cmd->add_option("-o,--output", *dis_out, "output file (default stdout)");
  dis_cmd->callback([=]() {
    ProgPtr p = load_program(*dis_prog, "dis");
    char* text = nullptr;
    check(wn_program_disassemble(p.get(), &text), "dis");
    spit(*dis_out, take(text), "dis");
  });

  // --- run ----------------------------------------------------------------
  auto* run_cmd = app.add_subcommand(
      "run", "execute an MVB image; exits with the guest's own exit code");
  run_cmd->configurable();
  auto run_prog = std::make_shared<std::string>();
  auto run_vm = std::make_shared<VmFlags>();
  run_cmd->add_option("program", *run_prog, "MVB image")->required();
  run_vm->attach(run_cmd, true);
  run_cmd->callback([=, &rc]() {
    ProgPtr p = load_program(*run_prog, "run");
    std::string input;
    wn_run_options opt = run_vm->options(&input, "run");
    wn_run_result r{};
    check(wn_run(p.get(), &opt, &r), "run");
    std::fwrite(r.output, 1, r.output_len, stdout);
    std::fflush(stdout);
    if (r.faulted) {
      std::string fault = r.fault ? r.fault : "?";
      wn_run_result_free(&r);
      throw PipelineError("run: guest fault: " + fault);
    }
    std::fprintf(stderr, "[winnow] guest exited with code %d after %llu steps\n",
                 (int)r.exit_code, (unsigned long long)r.steps);
    rc = (int)(r.exit_code & 0xFF);
    wn_run_result_free(&r);
  });

  // --- trace ----------------------------------------------------------------
  auto* trace_cmd = app.add_subcommand(
      "trace", "execute once and record the block-level trace as JSON");
  trace_cmd->configurable();
  auto trace_prog = std::make_shared<std::string>();
  auto trace_out = std::make_shared<std::string>();
  auto trace_vm = std::make_shared<VmFlags>();
  trace_cmd->add_option("program", *trace_prog, "MVB image")->required();
  trace_cmd->add_option("-o,--output", *trace_out,
                        "trace file (default stdout)");
  trace_vm->attach(trace_cmd, true);
  trace_cmd->callback([=]() {
    ProgPtr p = load_program(*trace_prog, "trace");
    std::string input;
    wn_run_options opt = trace_vm->options(&input, "trace");
    wn_trace* t = nullptr;
    check(wn_trace_program(p.get(), &opt, &t), "trace");
    TracePtr tp(t, wn_trace_free);
    char* text = nullptr;
    check(wn_trace_to_json(tp.get(), &text), "trace");
    spit(*trace_out, take(text), "trace");
  });

  // --- merge ----------------------------------------------------------------
  auto* merge_cmd =
      app.add_subcommand("merge", "merge trace files over the same binary");
  merge_cmd->configurable();
  auto merge_in = std::make_shared<std::vector<std::string>>();
  auto merge_out = std::make_shared<std::string>();
  merge_cmd->add_option("traces", *merge_in, "trace JSON files")
      ->required()
      ->expected(-1);
  merge_cmd->add_option("-o,--output", *merge_out,
                        "merged trace (default stdout)");
  merge_cmd->callback([=]() {
    std::vector<TracePtr> owned;
    std::vector<const wn_trace*> raw;
    for (const std::string& path : *merge_in) {
      owned.push_back(trace_from_file(path, "merge"));
      raw.push_back(owned.back().get());
    }
    wn_trace* m = nullptr;
    check(wn_trace_merge(raw.data(), raw.size(), &m), "merge");
    TracePtr mp(m, wn_trace_free);
    char* text = nullptr;
    check(wn_trace_to_json(mp.get(), &text), "merge");
    spit(*merge_out, take(text), "merge");
  });

  // --- expand ---------------------------------------------------------------
  auto* expand_cmd = app.add_subcommand(
      "expand",
      "build/expand a CFG from a trace or CFG artifact with a strategy");
  expand_cmd->configurable();
  auto expand_in = std::make_shared<std::string>();
  auto expand_prog = std::make_shared<std::string>();
  auto expand_out = std::make_shared<std::string>();
  auto expand_strategy = std::make_shared<int>(WN_STRATEGY_DS2);
  expand_cmd->add_option("artifact", *expand_in, "trace or cfg JSON file")
      ->required();
  expand_cmd->add_option("--program", *expand_prog,
                         "MVB image (required unless the input is already a "
                         "CFG and the strategy is d)");
  expand_cmd
      ->add_option("--strategy", *expand_strategy, "d, ds1 or ds2")
      ->transform(CLI::CheckedTransformer(kStrategies, CLI::ignore_case));
  expand_cmd->add_option("-o,--output", *expand_out,
                         "expanded cfg (default stdout)");
  expand_cmd->callback([=]() {
    std::string text = slurp(*expand_in, "expand");
    std::string kind = kind_of(text, "expand");
    CfgPtr built(nullptr, wn_cfg_free);
    if (kind == "trace") {
      if (expand_prog->empty())
        throw UsageError("expand: --program is required for a trace input");
      TracePtr t(nullptr, wn_trace_free);
      wn_trace* traw = nullptr;
      check(wn_trace_from_json(text.c_str(), &traw), "expand");
      t.reset(traw);
      ProgPtr p = load_program(*expand_prog, "expand");
      wn_cfg* c = nullptr;
      check(wn_cfg_build(t.get(), p.get(), &c), "expand");
      built.reset(c);
      wn_cfg* e = nullptr;
      check(wn_cfg_expand(built.get(), p.get(), (wn_strategy)*expand_strategy,
                          &e),
            "expand");
      built.reset(e);
    } else if (kind == "cfg") {
      wn_cfg* c = nullptr;
      check(wn_cfg_from_json(text.c_str(), &c), "expand");
      built.reset(c);
      if (*expand_strategy != WN_STRATEGY_D) {
        if (expand_prog->empty())
          throw UsageError("expand: --program is required for ds1/ds2");
        ProgPtr p = load_program(*expand_prog, "expand");
        wn_cfg* e = nullptr;
        check(wn_cfg_expand(built.get(), p.get(),
                            (wn_strategy)*expand_strategy, &e),
              "expand");
        built.reset(e);
      }
    } else {
      throw PipelineError("expand: artifact is neither a trace nor a cfg");
    }
    char* out = nullptr;
    check(wn_cfg_to_json(built.get(), &out), "expand");
    spit(*expand_out, take(out), "expand");
  });

  // --- structure --------------------------------------------------------
  auto* structure_cmd = app.add_subcommand(
      "structure", "recover functions (partition + promotion) from a CFG");
  structure_cmd->configurable();
  auto structure_in = std::make_shared<std::string>();
  auto structure_prog = std::make_shared<std::string>();
  auto structure_out = std::make_shared<std::string>();
  structure_cmd->add_option("cfg", *structure_in, "cfg JSON file")->required();
  structure_cmd->add_option("--program", *structure_prog, "MVB image")
      ->required();
  structure_cmd->add_option("-o,--output", *structure_out,
                            "structured program (default stdout)");
  structure_cmd->callback([=]() {
    CfgPtr c = cfg_from_file(*structure_in, "structure");
    ProgPtr p = load_program(*structure_prog, "structure");
    wn_structured* s = nullptr;
    check(wn_structure(c.get(), p.get(), &s), "structure");
    StructPtr sp(s, wn_structured_free);
    char* text = nullptr;
    check(wn_structured_to_json(sp.get(), &text), "structure");
    spit(*structure_out, take(text), "structure");
  });

  // --- lift ---------------------------------------------------------------
  auto* lift_cmd = app.add_subcommand(
      "lift", "lift a structured program to micro-ops or C source");
  lift_cmd->configurable();
  auto lift_in = std::make_shared<std::string>();
  auto lift_prog = std::make_shared<std::string>();
  auto lift_out = std::make_shared<std::string>();
  auto lift_c = std::make_shared<bool>(false);
  auto lift_guard = std::make_shared<int>(WN_GUARD_FAILSAFE);
  auto lift_mem = std::make_shared<uint32_t>(0);
  lift_cmd->add_option("structured", *lift_in, "structured JSON file")
      ->required();
  lift_cmd->add_option("--program", *lift_prog, "MVB image")->required();
  lift_cmd->add_flag("--c", *lift_c,
                     "emit the C translation unit instead of the listing");
  lift_cmd->add_option("--guard", *lift_guard, "failsafe or transparent")
      ->transform(CLI::CheckedTransformer(kGuards, CLI::ignore_case));
  lift_cmd
      ->add_option("--mem-size", *lift_mem,
                   "guest memory size baked into the emitted C")
      ->envname("WINNOW_MEM_SIZE");
  lift_cmd->add_option("-o,--output", *lift_out, "output (default stdout)");
  lift_cmd->callback([=]() {
    StructPtr s = structured_from_file(*lift_in, "lift");
    ProgPtr p = load_program(*lift_prog, "lift");
    char* text = nullptr;
    if (*lift_c)
      check(wn_emit_source(s.get(), p.get(), (wn_guard)*lift_guard, *lift_mem,
                           &text),
            "lift");
    else
      check(wn_lift_listing(s.get(), p.get(), &text), "lift");
    spit(*lift_out, take(text), "lift");
  });

  // --- rewrite -------------------------------------------------------------
  auto* rewrite_cmd = app.add_subcommand(
      "rewrite", "rewrite the binary to its covered territory");
  rewrite_cmd->configurable();
  auto rewrite_in = std::make_shared<std::string>();
  auto rewrite_prog = std::make_shared<std::string>();
  auto rewrite_out = std::make_shared<std::string>();
  auto rewrite_guard = std::make_shared<int>(WN_GUARD_FAILSAFE);
  rewrite_cmd->add_option("structured", *rewrite_in, "structured JSON file")
      ->required();
  rewrite_cmd->add_option("--program", *rewrite_prog, "MVB image")->required();
  rewrite_cmd->add_option("--guard", *rewrite_guard, "failsafe or transparent")
      ->transform(CLI::CheckedTransformer(kGuards, CLI::ignore_case));
  rewrite_cmd->add_option(
      "-o,--output", *rewrite_out,
      "output image (default: program with .rewritten.mvb)");
  rewrite_cmd->callback([=]() {
    StructPtr s = structured_from_file(*rewrite_in, "rewrite");
    ProgPtr p = load_program(*rewrite_prog, "rewrite");
    wn_program* r = nullptr;
    check(wn_rewrite(s.get(), p.get(), (wn_guard)*rewrite_guard, &r),
          "rewrite");
    ProgPtr rew(r, wn_program_free);
    std::string out = rewrite_out->empty()
                          ? with_suffix(*rewrite_prog, ".rewritten.mvb")
                          : *rewrite_out;
    check(wn_program_save_mvb(rew.get(), out.c_str()), "rewrite");
  });

  // --- debloat -------------------------------------------------------------
  auto* debloat_cmd = app.add_subcommand(
      "debloat",
      "end-to-end: trace inputs, recover, lift, emit and measure");
  debloat_cmd->configurable();
  auto debloat_prog = std::make_shared<std::string>();
  auto debloat_inputs = std::make_shared<std::vector<std::string>>();
  auto debloat_strategy = std::make_shared<int>(WN_STRATEGY_DS2);
  auto debloat_guard = std::make_shared<int>(WN_GUARD_FAILSAFE);
  auto debloat_backend = std::make_shared<int>(WN_BACKEND_BOTH);
  auto debloat_vm = std::make_shared<VmFlags>();
  debloat_cmd->add_option("program", *debloat_prog, "MVB image")->required();
  debloat_cmd
      ->add_option("--input", *debloat_inputs,
                   "input file traced as one run (repeatable)")
      ->required();
  debloat_cmd->add_option("--strategy", *debloat_strategy, "d, ds1 or ds2")
      ->transform(CLI::CheckedTransformer(kStrategies, CLI::ignore_case));
  debloat_cmd->add_option("--guard", *debloat_guard, "failsafe or transparent")
      ->transform(CLI::CheckedTransformer(kGuards, CLI::ignore_case));
  debloat_cmd
      ->add_option("--backend", *debloat_backend, "source, rewriter or both")
      ->transform(CLI::CheckedTransformer(kBackends, CLI::ignore_case));
  debloat_vm->attach(debloat_cmd, false);
  debloat_cmd->callback([=]() {
    ProgPtr p = load_program(*debloat_prog, "debloat");
    std::vector<std::string> contents;
    std::vector<const char*> ptrs;
    std::vector<size_t> lens;
    for (const std::string& path : *debloat_inputs) {
      contents.push_back(slurp(path, "debloat"));
      ptrs.push_back(contents.back().data());
      lens.push_back(contents.back().size());
    }
    wn_debloat_options opt{};
    opt.strategy = (wn_strategy)*debloat_strategy;
    opt.guard = (wn_guard)*debloat_guard;
    opt.backend = (wn_backend)*debloat_backend;
    opt.mem_size = debloat_vm->mem_size;
    opt.quantum = debloat_vm->quantum;
    opt.step_limit = debloat_vm->step_limit;
    wn_debloat_result res{};
    check(wn_debloat(p.get(), ptrs.data(), lens.data(), ptrs.size(), &opt,
                     &res),
          "debloat");
    std::string metrics = res.metrics_json ? res.metrics_json : "";
    if (res.rewritten) {
      std::string out = with_suffix(*debloat_prog, ".debloated.mvb");
      wn_status st = wn_program_save_mvb(res.rewritten, out.c_str());
      if (st != WN_OK) {
        wn_debloat_result_free(&res);
        throw PipelineError(std::string("debloat: ") + wn_last_error());
      }
      std::fprintf(stderr, "[winnow] wrote %s\n", out.c_str());
    }
    if (res.source) {
      std::string out = with_suffix(*debloat_prog, ".lifted.c-subset");
      spit(out, res.source, "debloat");
      std::fprintf(stderr, "[winnow] wrote %s\n", out.c_str());
    }
    wn_debloat_result_free(&res);
    fs::path metrics_path =
        fs::path(*debloat_prog).parent_path() / "metrics.json";
    spit(metrics_path.string(), metrics, "debloat");
    std::fprintf(stderr, "[winnow] wrote %s\n", metrics_path.c_str());
  });

  // --- coverage ------------------------------------------------------------
  auto* coverage_cmd = app.add_subcommand(
      "coverage", "instruction coverage of a CFG over its binary");
  coverage_cmd->configurable();
  auto coverage_in = std::make_shared<std::string>();
  auto coverage_prog = std::make_shared<std::string>();
  auto coverage_json = std::make_shared<bool>(false);
  coverage_cmd->add_option("cfg", *coverage_in, "cfg JSON file")->required();
  coverage_cmd->add_option("--program", *coverage_prog, "MVB image")
      ->required();
  coverage_cmd->add_flag("--json", *coverage_json, "JSON instead of a table");
  coverage_cmd->callback([=]() {
    CfgPtr c = cfg_from_file(*coverage_in, "coverage");
    ProgPtr p = load_program(*coverage_prog, "coverage");
    char* text = nullptr;
    check(wn_coverage(c.get(), p.get(), *coverage_json ? 1 : 0, &text),
          "coverage");
    spit("", take(text), "coverage");
  });

  // --- gadgets -------------------------------------------------------------
  auto* gadgets_cmd =
      app.add_subcommand("gadgets", "unique gadget census of a binary");
  gadgets_cmd->configurable();
  auto gadgets_prog = std::make_shared<std::string>();
  auto gadgets_baseline = std::make_shared<std::string>();
  auto gadgets_max = std::make_shared<uint32_t>(0);
  auto gadgets_json = std::make_shared<bool>(false);
  gadgets_cmd->add_option("program", *gadgets_prog, "MVB image")->required();
  gadgets_cmd->add_option("--baseline", *gadgets_baseline,
                          "original image to compare against");
  gadgets_cmd->add_option("--max-len", *gadgets_max,
                          "window length in instructions (default 6)");
  gadgets_cmd->add_flag("--json", *gadgets_json, "JSON instead of a table");
  gadgets_cmd->callback([=]() {
    ProgPtr p = load_program(*gadgets_prog, "gadgets");
    ProgPtr base(nullptr, wn_program_free);
    if (!gadgets_baseline->empty())
      base = load_program(*gadgets_baseline, "gadgets");
    char* text = nullptr;
    check(wn_gadgets(p.get(), base.get(), *gadgets_max,
                     *gadgets_json ? 1 : 0, &text),
          "gadgets");
    spit("", take(text), "gadgets");
  });

  // --- size ----------------------------------------------------------------
  auto* size_cmd = app.add_subcommand("size", "code size of a binary");
  size_cmd->configurable();
  auto size_prog = std::make_shared<std::string>();
  auto size_baseline = std::make_shared<std::string>();
  auto size_json = std::make_shared<bool>(false);
  size_cmd->add_option("program", *size_prog, "MVB image")->required();
  size_cmd->add_option("--baseline", *size_baseline,
                       "original image to compare against");
  size_cmd->add_flag("--json", *size_json, "JSON instead of a table");
  size_cmd->callback([=]() {
    ProgPtr p = load_program(*size_prog, "size");
    uint32_t bytes = wn_code_size(p.get());
    std::string out;
    if (!size_baseline->empty()) {
      ProgPtr base = load_program(*size_baseline, "size");
      uint32_t bb = wn_code_size(base.get());
      if (bb == 0 && bytes != 0)
        throw PipelineError("size: baseline has no text to compare against");
      double pct = bb == 0 ? 100.0 : 100.0 * (double)bytes / (double)bb;
      if (*size_json) {
        nlohmann::json j;
        j["kind"] = "size";
        j["bytes"] = bytes;
        j["baseline_bytes"] = bb;
        j["percent_of_baseline"] = std::round(pct * 100.0) / 100.0;
        out = j.dump(2) + "\n";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", pct);
        out = "code size             " + std::to_string(bytes) + " bytes\n" +
              "vs baseline           " + buf + "%\n";
      }
    } else if (*size_json) {
      nlohmann::json j;
      j["kind"] = "size";
      j["bytes"] = bytes;
      out = j.dump(2) + "\n";
    } else {
      out = "code size             " + std::to_string(bytes) + " bytes\n";
    }
    spit("", out, "size");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const PipelineError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
