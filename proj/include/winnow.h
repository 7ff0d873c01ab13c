#ifndef WINNOW_H
#define WINNOW_H

/* Public C interface to the winnow debloating library.
 *
 * Conventions:
 *   - Every fallible call returns wn_status; WN_OK is 0.  On failure the
 *     out-parameters are untouched and wn_last_error() carries a message
 *     (thread-local, valid until the next failing call on the same thread).
 *   - Objects are opaque handles created by the library and released with
 *     the matching *_free function.  Freeing NULL is a no-op.
 *   - Strings returned through char** are NUL-terminated, heap-allocated,
 *     and released with wn_string_free.  Guest output may contain NUL
 *     bytes, so wn_run also reports an explicit length.
 *   - Numeric option fields set to 0 select the built-in defaults.
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wn_status {
  WN_OK = 0,
  WN_ERR_IO = 1,       /* file could not be read or written */
  WN_ERR_PARSE = 2,    /* bad assembly or JSON input */
  WN_ERR_FORMAT = 3,   /* malformed container or serialized artifact */
  WN_ERR_VERIFY = 4,   /* artifacts disagree with each other */
  WN_ERR_INTERNAL = 5, /* invariant violation inside the library */
  WN_ERR_ARG = 6       /* NULL handle or invalid enum at the C boundary */
} wn_status;

const char* wn_version(void);
const char* wn_last_error(void);
void wn_string_free(char* s);

typedef enum wn_strategy {
  WN_STRATEGY_D = 0,
  WN_STRATEGY_DS1 = 1,
  WN_STRATEGY_DS2 = 2
} wn_strategy;

typedef enum wn_guard {
  WN_GUARD_FAILSAFE = 0,
  WN_GUARD_TRANSPARENT = 1
} wn_guard;

typedef enum wn_backend {
  WN_BACKEND_SOURCE = 0,
  WN_BACKEND_REWRITER = 1,
  WN_BACKEND_BOTH = 2
} wn_backend;

typedef struct wn_program wn_program;
typedef struct wn_trace wn_trace;
typedef struct wn_cfg wn_cfg;
typedef struct wn_structured wn_structured;

/* -- programs ---------------------------------------------------------- */

/* text_base 0 selects the default load address (0x1000). */
wn_status wn_program_assemble(const char* source, uint32_t text_base,
                              wn_program** out);
wn_status wn_program_load_mvb(const char* path, wn_program** out);
wn_status wn_program_save_mvb(const wn_program* p, const char* path);
wn_status wn_program_disassemble(const wn_program* p, char** out);
wn_status wn_program_text_sha256(const wn_program* p, char** out);
uint32_t wn_program_entry(const wn_program* p);
uint32_t wn_program_text_size(const wn_program* p); /* bytes */
void wn_program_free(wn_program* p);

/* -- execution --------------------------------------------------------- */

typedef struct wn_run_options {
  uint32_t mem_size;   /* guest memory bytes; 0 = 1 MiB */
  uint32_t quantum;    /* scheduler quantum in steps; 0 = default */
  uint64_t step_limit; /* total step budget; 0 = default */
  const char* input;   /* bytes visible to the guest's stdin; may be NULL */
  size_t input_len;
} wn_run_options;

typedef struct wn_run_result {
  int faulted;       /* 0 when the guest exited cleanly */
  int32_t exit_code; /* guest r0 at exit; meaningful when !faulted */
  char* fault;       /* fault description when faulted, else NULL */
  char* output;      /* everything the guest wrote */
  size_t output_len;
  uint64_t steps;
} wn_run_result;

/* opt may be NULL for all defaults.  Fills *out; release the strings with
 * wn_run_result_free.  A guest fault is reported in the result, not as a
 * wn_status error. */
wn_status wn_run(const wn_program* p, const wn_run_options* opt,
                 wn_run_result* out);
void wn_run_result_free(wn_run_result* r);

/* One traced execution.  Unlike wn_run, a faulting guest is an error
 * (WN_ERR_VERIFY): only clean runs may seed a debloating pass. */
wn_status wn_trace_program(const wn_program* p, const wn_run_options* opt,
                           wn_trace** out);

/* -- traces ------------------------------------------------------------ */

wn_status wn_trace_to_json(const wn_trace* t, char** out);
wn_status wn_trace_from_json(const char* text, wn_trace** out);
wn_status wn_trace_merge(const wn_trace* const* traces, size_t n,
                         wn_trace** out);
void wn_trace_free(wn_trace* t);

/* -- control-flow graphs ------------------------------------------------ */

wn_status wn_cfg_build(const wn_trace* t, const wn_program* p, wn_cfg** out);
wn_status wn_cfg_expand(const wn_cfg* c, const wn_program* p, wn_strategy s,
                        wn_cfg** out);
wn_status wn_cfg_to_json(const wn_cfg* c, char** out);
wn_status wn_cfg_from_json(const char* text, wn_cfg** out);
void wn_cfg_free(wn_cfg* c);

/* -- structuring --------------------------------------------------------- */

wn_status wn_structure(const wn_cfg* c, const wn_program* p,
                       wn_structured** out);
wn_status wn_structured_to_json(const wn_structured* s, char** out);
wn_status wn_structured_from_json(const char* text, wn_structured** out);
void wn_structured_free(wn_structured* s);

/* -- lifting and backends ------------------------------------------------ */

/* Human-readable micro-op listing of every lifted, localized function. */
wn_status wn_lift_listing(const wn_structured* s, const wn_program* p,
                          char** out);
/* The emitted C translation unit.  mem_size 0 = 1 MiB. */
wn_status wn_emit_source(const wn_structured* s, const wn_program* p,
                         wn_guard g, uint32_t mem_size, char** out);
wn_status wn_rewrite(const wn_structured* s, const wn_program* p, wn_guard g,
                     wn_program** out);

/* -- metrics ------------------------------------------------------------- */

/* as_json selects between the JSON payload and the aligned text table. */
wn_status wn_coverage(const wn_cfg* c, const wn_program* p, int as_json,
                      char** out);
/* baseline may be NULL; max_len 0 = 6. */
wn_status wn_gadgets(const wn_program* p, const wn_program* baseline,
                     uint32_t max_len, int as_json, char** out);
uint32_t wn_code_size(const wn_program* p);

/* -- one-shot composition ------------------------------------------------ */

typedef struct wn_debloat_options {
  wn_strategy strategy;
  wn_guard guard;
  wn_backend backend;
  uint32_t mem_size;
  uint32_t quantum;
  uint64_t step_limit;
} wn_debloat_options;

typedef struct wn_debloat_result {
  wn_program* rewritten; /* NULL unless the backend covers the rewriter */
  char* source;          /* NULL unless the backend covers source */
  char* metrics_json;
} wn_debloat_result;

/* trace(xN inputs) -> merge -> build -> expand -> structure -> lift ->
 * emit/rewrite -> metrics, identical to running the stages individually.
 * inputs[i]/input_lens[i] is the stdin for the i-th traced run; at least
 * one input is required.  opt may be NULL for all defaults. */
wn_status wn_debloat(const wn_program* p, const char* const* inputs,
                     const size_t* input_lens, size_t n_inputs,
                     const wn_debloat_options* opt, wn_debloat_result* out);
void wn_debloat_result_free(wn_debloat_result* r);

#ifdef __cplusplus
}
#endif

#endif /* WINNOW_H */
