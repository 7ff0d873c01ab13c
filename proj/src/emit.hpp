#pragma once
// C source emission: renders lifted functions as one self-contained C
// translation unit (contract E1) that reproduces the guest's observable
// behaviour — a global register file, a global guest-memory array, no-arg
// functions, if/goto control flow, and a small runtime for traps and host
// calls.  Output is deterministic byte-for-byte.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lift.hpp"

namespace winnow::emit {

enum class GuardMode : uint8_t {
  FailSafe,     // unexplored paths trap with exit code 99
  Transparent,  // guarded conditionals fold to their explored side
};

const char* guard_mode_name(GuardMode m);
std::optional<GuardMode> guard_mode_from_name(const std::string& s);

struct Options {
  GuardMode mode = GuardMode::FailSafe;
  uint32_t mem_size = 1u << 20;  // guest memory image size, bytes
};

struct EmittedSource {
  std::string text;                           // the whole translation unit
  std::map<uint32_t, std::string> functions;  // function entry -> emitted name
};

// Renders the program.  `funcs` must come from lift::lift (one function per
// partition id, blocks ascending) and be localized; a function with zero
// blocks is an internal error.
EmittedSource emit_source(const structure::StructuredProgram& sp,
                          const isa::Program& prog,
                          const std::vector<lift::LiftedFunction>& funcs,
                          const Options& opt = {});

}  // namespace winnow::emit
