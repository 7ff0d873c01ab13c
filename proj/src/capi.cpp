// The shared-library boundary: opaque handles over the core types, status
// codes mirroring winnow::errc, and a thread-local last-error message.  No
// exception may cross this file.

#include "winnow.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>

#include "cfg.hpp"
#include "common.hpp"
#include "emit.hpp"
#include "isa.hpp"
#include "lift.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "rewrite.hpp"
#include "structure.hpp"
#include "trace.hpp"
#include "vm.hpp"

struct wn_program {
  winnow::isa::Program v;
};
struct wn_trace {
  winnow::trace::TraceSet v;
};
struct wn_cfg {
  winnow::cfg::Cfg v;
};
struct wn_structured {
  winnow::structure::StructuredProgram v;
};

namespace {

thread_local std::string g_last_error;

wn_status fail(wn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

wn_status status_of(winnow::errc c) {
  switch (c) {
    case winnow::errc::io: return WN_ERR_IO;
    case winnow::errc::parse: return WN_ERR_PARSE;
    case winnow::errc::format: return WN_ERR_FORMAT;
    case winnow::errc::verify: return WN_ERR_VERIFY;
    case winnow::errc::internal: return WN_ERR_INTERNAL;
  }
  return WN_ERR_INTERNAL;
}

// Runs the body, translating exceptions into status codes.
template <typename F>
wn_status guarded(F&& body) {
  try {
    return body();
  } catch (const winnow::error& e) {
    return fail(status_of(e.code), e.what());
  } catch (const std::bad_alloc&) {
    return fail(WN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(WN_ERR_INTERNAL, e.what());
  }
}

char* dup_bytes(const std::string& s) {
  char* p = (char*)std::malloc(s.size() + 1);
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size());
  p[s.size()] = '\0';
  return p;
}

winnow::vm::RunOptions run_options(const wn_run_options* opt) {
  winnow::vm::RunOptions ro;
  if (!opt) return ro;
  if (opt->mem_size) ro.mem_size = opt->mem_size;
  if (opt->quantum) ro.quantum = opt->quantum;
  if (opt->step_limit) ro.step_limit = opt->step_limit;
  if (opt->input) ro.input.assign(opt->input, opt->input_len);
  return ro;
}

std::optional<winnow::cfg::Strategy> strategy_of(wn_strategy s) {
  switch (s) {
    case WN_STRATEGY_D: return winnow::cfg::Strategy::D;
    case WN_STRATEGY_DS1: return winnow::cfg::Strategy::DS1;
    case WN_STRATEGY_DS2: return winnow::cfg::Strategy::DS2;
  }
  return std::nullopt;
}

std::optional<winnow::emit::GuardMode> guard_of(wn_guard g) {
  switch (g) {
    case WN_GUARD_FAILSAFE: return winnow::emit::GuardMode::FailSafe;
    case WN_GUARD_TRANSPARENT: return winnow::emit::GuardMode::Transparent;
  }
  return std::nullopt;
}

}  // namespace

extern "C" {

const char* wn_version(void) { return "1.0.0"; }

const char* wn_last_error(void) { return g_last_error.c_str(); }

void wn_string_free(char* s) { std::free(s); }

/* -- programs ---------------------------------------------------------- */

wn_status wn_program_assemble(const char* source, uint32_t text_base,
                              wn_program** out) {
  if (!source || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto p = std::make_unique<wn_program>();
    p->v = winnow::isa::assemble(
        source, text_base ? text_base : winnow::isa::kDefaultTextBase);
    *out = p.release();
    return WN_OK;
  });
}

wn_status wn_program_load_mvb(const char* path, wn_program** out) {
  if (!path || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto p = std::make_unique<wn_program>();
    p->v = winnow::isa::load_mvb_file(path);
    *out = p.release();
    return WN_OK;
  });
}

wn_status wn_program_save_mvb(const wn_program* p, const char* path) {
  if (!p || !path) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    winnow::isa::save_mvb_file(p->v, path);
    return WN_OK;
  });
}

wn_status wn_program_disassemble(const wn_program* p, char** out) {
  if (!p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    *out = dup_bytes(winnow::isa::disassemble(p->v));
    return WN_OK;
  });
}

wn_status wn_program_text_sha256(const wn_program* p, char** out) {
  if (!p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    *out = dup_bytes(p->v.text_sha256());
    return WN_OK;
  });
}

uint32_t wn_program_entry(const wn_program* p) { return p ? p->v.entry : 0; }

uint32_t wn_program_text_size(const wn_program* p) {
  return p ? p->v.text_size() : 0;
}

void wn_program_free(wn_program* p) { delete p; }

/* -- execution --------------------------------------------------------- */

wn_status wn_run(const wn_program* p, const wn_run_options* opt,
                 wn_run_result* out) {
  if (!p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    winnow::vm::RunResult r = winnow::vm::run(p->v, run_options(opt));
    wn_run_result res{};
    res.faulted = r.ok() ? 0 : 1;
    res.exit_code = r.exit_code;
    if (!r.ok()) {
      std::string msg = winnow::vm::fault_name(r.fault);
      msg += " at " + winnow::hex32(r.fault_addr);
      if (!r.fault_detail.empty()) msg += ": " + r.fault_detail;
      res.fault = dup_bytes(msg);
    }
    res.output = dup_bytes(r.out);
    res.output_len = r.out.size();
    res.steps = r.steps;
    *out = res;
    return WN_OK;
  });
}

void wn_run_result_free(wn_run_result* r) {
  if (!r) return;
  std::free(r->fault);
  std::free(r->output);
  r->fault = nullptr;
  r->output = nullptr;
}

wn_status wn_trace_program(const wn_program* p, const wn_run_options* opt,
                           wn_trace** out) {
  if (!p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    winnow::vm::RunOptions ro = run_options(opt);
    winnow::pipeline::Options po;
    po.mem_size = ro.mem_size;
    po.quantum = ro.quantum;
    po.step_limit = ro.step_limit;
    auto t = std::make_unique<wn_trace>();
    t->v = winnow::pipeline::trace_run(p->v, ro.input, po);
    *out = t.release();
    return WN_OK;
  });
}

/* -- traces ------------------------------------------------------------ */

wn_status wn_trace_to_json(const wn_trace* t, char** out) {
  if (!t || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    *out = dup_bytes(winnow::trace::to_json(t->v));
    return WN_OK;
  });
}

wn_status wn_trace_from_json(const char* text, wn_trace** out) {
  if (!text || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto t = std::make_unique<wn_trace>();
    t->v = winnow::trace::from_json(text);
    *out = t.release();
    return WN_OK;
  });
}

wn_status wn_trace_merge(const wn_trace* const* traces, size_t n,
                         wn_trace** out) {
  if (!traces || !out || n == 0) return fail(WN_ERR_ARG, "NULL argument");
  for (size_t i = 0; i < n; ++i)
    if (!traces[i]) return fail(WN_ERR_ARG, "NULL trace handle");
  return guarded([&] {
    std::vector<winnow::trace::TraceSet> ts;
    ts.reserve(n);
    for (size_t i = 0; i < n; ++i) ts.push_back(traces[i]->v);
    auto t = std::make_unique<wn_trace>();
    t->v = winnow::trace::merge(ts);
    *out = t.release();
    return WN_OK;
  });
}

void wn_trace_free(wn_trace* t) { delete t; }

/* -- control-flow graphs ------------------------------------------------ */

wn_status wn_cfg_build(const wn_trace* t, const wn_program* p, wn_cfg** out) {
  if (!t || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto c = std::make_unique<wn_cfg>();
    c->v = winnow::cfg::build_cfg(t->v, p->v);
    *out = c.release();
    return WN_OK;
  });
}

wn_status wn_cfg_expand(const wn_cfg* c, const wn_program* p, wn_strategy s,
                        wn_cfg** out) {
  if (!c || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  auto strat = strategy_of(s);
  if (!strat) return fail(WN_ERR_ARG, "invalid strategy");
  return guarded([&] {
    auto e = std::make_unique<wn_cfg>();
    e->v = winnow::cfg::expand(c->v, p->v, *strat);
    *out = e.release();
    return WN_OK;
  });
}

wn_status wn_cfg_to_json(const wn_cfg* c, char** out) {
  if (!c || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    *out = dup_bytes(winnow::cfg::to_json(c->v));
    return WN_OK;
  });
}

wn_status wn_cfg_from_json(const char* text, wn_cfg** out) {
  if (!text || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto c = std::make_unique<wn_cfg>();
    c->v = winnow::cfg::from_json(text);
    *out = c.release();
    return WN_OK;
  });
}

void wn_cfg_free(wn_cfg* c) { delete c; }

/* -- structuring --------------------------------------------------------- */

wn_status wn_structure(const wn_cfg* c, const wn_program* p,
                       wn_structured** out) {
  if (!c || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto s = std::make_unique<wn_structured>();
    s->v = winnow::structure::structure(c->v, p->v);
    *out = s.release();
    return WN_OK;
  });
}

wn_status wn_structured_to_json(const wn_structured* s, char** out) {
  if (!s || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    *out = dup_bytes(winnow::structure::to_json(s->v));
    return WN_OK;
  });
}

wn_status wn_structured_from_json(const char* text, wn_structured** out) {
  if (!text || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    auto s = std::make_unique<wn_structured>();
    s->v = winnow::structure::from_json(text);
    *out = s.release();
    return WN_OK;
  });
}

void wn_structured_free(wn_structured* s) { delete s; }

/* -- lifting and backends ------------------------------------------------ */

wn_status wn_lift_listing(const wn_structured* s, const wn_program* p,
                          char** out) {
  if (!s || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    std::string text;
    for (winnow::lift::LiftedFunction& f : winnow::lift::lift(s->v, p->v)) {
      f = winnow::lift::localize(std::move(f));
      text += winnow::lift::render(f);
      text += "\n";
    }
    *out = dup_bytes(text);
    return WN_OK;
  });
}

wn_status wn_emit_source(const wn_structured* s, const wn_program* p,
                         wn_guard g, uint32_t mem_size, char** out) {
  if (!s || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  auto mode = guard_of(g);
  if (!mode) return fail(WN_ERR_ARG, "invalid guard mode");
  return guarded([&] {
    std::vector<winnow::lift::LiftedFunction> funcs =
        winnow::lift::lift(s->v, p->v);
    for (winnow::lift::LiftedFunction& f : funcs)
      f = winnow::lift::localize(std::move(f));
    winnow::emit::Options eo;
    eo.mode = *mode;
    if (mem_size) eo.mem_size = mem_size;
    *out = dup_bytes(winnow::emit::emit_source(s->v, p->v, funcs, eo).text);
    return WN_OK;
  });
}

wn_status wn_rewrite(const wn_structured* s, const wn_program* p, wn_guard g,
                     wn_program** out) {
  if (!s || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  auto mode = guard_of(g);
  if (!mode) return fail(WN_ERR_ARG, "invalid guard mode");
  return guarded([&] {
    auto r = std::make_unique<wn_program>();
    r->v = winnow::rewrite::rewrite_binary(s->v, p->v, *mode);
    *out = r.release();
    return WN_OK;
  });
}

/* -- metrics ------------------------------------------------------------- */

wn_status wn_coverage(const wn_cfg* c, const wn_program* p, int as_json,
                      char** out) {
  if (!c || !p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    winnow::metrics::CoverageReport r = winnow::metrics::coverage(c->v, p->v);
    *out = dup_bytes(as_json ? winnow::metrics::to_json(r)
                             : winnow::metrics::to_table(r));
    return WN_OK;
  });
}

wn_status wn_gadgets(const wn_program* p, const wn_program* baseline,
                     uint32_t max_len, int as_json, char** out) {
  if (!p || !out) return fail(WN_ERR_ARG, "NULL argument");
  return guarded([&] {
    uint32_t len = max_len ? max_len : 6;
    winnow::metrics::GadgetReport r =
        baseline ? winnow::metrics::count_gadgets_vs(p->v, baseline->v, len)
                 : winnow::metrics::count_gadgets(p->v, len);
    *out = dup_bytes(as_json ? winnow::metrics::to_json(r)
                             : winnow::metrics::to_table(r));
    return WN_OK;
  });
}

uint32_t wn_code_size(const wn_program* p) {
  return p ? winnow::metrics::code_size(p->v) : 0;
}

/* -- one-shot composition ------------------------------------------------ */

wn_status wn_debloat(const wn_program* p, const char* const* inputs,
                     const size_t* input_lens, size_t n_inputs,
                     const wn_debloat_options* opt, wn_debloat_result* out) {
  if (!p || !inputs || !input_lens || !out)
    return fail(WN_ERR_ARG, "NULL argument");
  for (size_t i = 0; i < n_inputs; ++i)
    if (!inputs[i]) return fail(WN_ERR_ARG, "NULL input");
  winnow::pipeline::Options po;
  if (opt) {
    auto strat = strategy_of(opt->strategy);
    auto mode = guard_of(opt->guard);
    if (!strat) return fail(WN_ERR_ARG, "invalid strategy");
    if (!mode) return fail(WN_ERR_ARG, "invalid guard mode");
    switch (opt->backend) {
      case WN_BACKEND_SOURCE: po.backend = winnow::pipeline::Backend::Source; break;
      case WN_BACKEND_REWRITER: po.backend = winnow::pipeline::Backend::Rewriter; break;
      case WN_BACKEND_BOTH: po.backend = winnow::pipeline::Backend::Both; break;
      default: return fail(WN_ERR_ARG, "invalid backend");
    }
    po.strategy = *strat;
    po.guard = *mode;
    if (opt->mem_size) po.mem_size = opt->mem_size;
    if (opt->quantum) po.quantum = opt->quantum;
    if (opt->step_limit) po.step_limit = opt->step_limit;
  }
  return guarded([&] {
    std::vector<std::string> ins;
    ins.reserve(n_inputs);
    for (size_t i = 0; i < n_inputs; ++i)
      ins.emplace_back(inputs[i], input_lens[i]);
    winnow::pipeline::Artifacts art = winnow::pipeline::debloat(p->v, ins, po);
    wn_debloat_result res{};
    if (art.rewritten) {
      auto r = std::make_unique<wn_program>();
      r->v = std::move(*art.rewritten);
      res.rewritten = r.release();
    }
    if (art.source) res.source = dup_bytes(art.source->text);
    res.metrics_json = dup_bytes(art.metrics_json);
    *out = res;
    return WN_OK;
  });
}

void wn_debloat_result_free(wn_debloat_result* r) {
  if (!r) return;
  wn_program_free(r->rewritten);
  std::free(r->source);
  std::free(r->metrics_json);
  r->rewritten = nullptr;
  r->source = nullptr;
  r->metrics_json = nullptr;
}

}  // extern "C"
