#pragma once

// Binary rewriting: re-emits the kept blocks of a structured program as a
// fresh MiniISA image.
//
// Blocks are laid out in ascending old-address order from the original text
// base.  Direct branches are re-targeted to the new block addresses.  Values
// that travel through registers (return addresses, indirect-branch targets,
// spawn entries) keep their ORIGINAL addresses: every BL/BLR loads lr with
// the old resume address, and each indirect transfer site becomes a
// compare/branch chain that translates a recorded old address to its new
// location at the moment of the transfer.  A RET chain falls back to a plain
// RET so the thread-exit sentinel keeps working; spawn sites translate the
// entry register the same way before the SVC.
//
// Unexplored conditional sides, unresolved calls and (in fail-safe mode)
// dispatch misses become [MOVI r0, 99; SVC 0] stubs, mirroring the emitted
// C's trap exit codes; spawn-entry misses exit 98.  Transparent mode folds
// guarded conditionals to their explored side and drops the last dispatch
// compare, like the source backend.
//
// The chains clobber r12 and the flags (and every call site rewrites lr);
// r12/r13 are reserved as transfer scratch by the ABI, so conforming guests
// are unaffected.  The data segment is copied byte-identical at its original
// base, and the entry point follows the entry block to its new address.

#include "emit.hpp"
#include "structure.hpp"

namespace winnow::rewrite {

// Throws errc::verify in fail-safe mode when a recorded dispatch target has
// no kept block (transparent mode silently drops the arm), errc::format when
// an address cannot be materialized in a MOVI immediate.
isa::Program rewrite_binary(const structure::StructuredProgram& sp,
                            const isa::Program& prog, emit::GuardMode mode);

}  // namespace winnow::rewrite
