#pragma once

// Deterministic interpreter for MiniISA images with optional tracing.
//
// Threading: SVC 4 spawns a guest thread, SVC 5 joins one.  Threads are
// simulated on one host thread by a cooperative round-robin scheduler that
// switches every `quantum` instructions and at spawn, blocking join, and
// thread exit, so a run is a pure function of (program, input, quantum).
//
// Each thread owns a 64 KiB stack band carved from the top of guest memory
// (band index = tid); sp starts at the band top and sp-relative accesses
// must stay inside the band.  lr starts at the exit sentinel: RET to the
// sentinel ends the thread, and ending the main thread ends the program
// with r0 as the exit code, exactly like SVC 0 does.
//
// Tracing records, per thread, the bounds of every executed basic block,
// the executed successor edges, and the targets of executed indirect
// branches.  Caches merge into one TraceSet when the program exits.
// Tracing never changes guest-visible behavior.

#include <cstdint>
#include <optional>
#include <string>

#include "isa.hpp"
#include "trace.hpp"

namespace winnow::vm {

inline constexpr uint32_t kDefaultMemSize = 1u << 20;
inline constexpr uint32_t kStackBand = 64u * 1024;
inline constexpr int kMaxThreads = 8;
inline constexpr uint32_t kExitSentinel = 0xFFFFFFF0;
inline constexpr uint32_t kDefaultQuantum = 1000;
inline constexpr uint64_t kDefaultStepLimit = 50'000'000;

// Guest misbehavior surfaces as a fault result, never as a host crash.
enum class Fault : uint8_t {
  none,
  undecodable,      // fetched word does not decode
  mem_unaligned,    // LDR/STR address not word-aligned
  mem_oob,          // access outside guest memory, or store into text
  stack_band,       // sp-relative access outside the thread's stack band
  bad_jump,         // control transferred outside text or to an unaligned address
  invalid_syscall,  // unknown SVC number or bad spawn/join arguments
  step_limit,       // instruction budget exhausted
  deadlock,         // every live thread is blocked in join
};

const char* fault_name(Fault f);

struct RunOptions {
  uint32_t mem_size = kDefaultMemSize;
  uint32_t quantum = kDefaultQuantum;
  uint64_t step_limit = kDefaultStepLimit;
  std::string input;  // bytes visible to getint (SVC 3)
  bool collect_trace = false;
};

struct RunResult {
  Fault fault = Fault::none;
  int32_t exit_code = 0;     // r0 at exit; meaningful only when fault == none
  uint32_t fault_addr = 0;   // faulting instruction, or the bad target/address
  std::string fault_detail;
  std::string out;           // everything the guest printed
  uint64_t steps = 0;        // instructions executed, all threads
  std::optional<trace::TraceSet> trace;  // set iff collect_trace and a clean exit

  bool ok() const { return fault == Fault::none; }
  bool operator==(const RunResult&) const = default;
};

// Throws errc::verify for unusable options (quantum 0, image does not fit).
RunResult run(const isa::Program& prog, const RunOptions& opts = {});

}  // namespace winnow::vm
