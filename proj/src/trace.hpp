#pragma once

// Dynamic trace model: the set of basic blocks observed during execution,
// the executed successor edges, and the observed targets of every indirect
// control transfer (BR, BLR, RET).  Traces from multiple runs of the same
// binary merge into a single TraceSet; merging re-splits blocks so that the
// union remains a partition (a block boundary discovered by one run splits
// the overlapping blocks recorded by another).

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "isa.hpp"

namespace winnow::trace {

struct BlockRecord {
  uint32_t start = 0;
  uint32_t end = 0;  // address of the last instruction (terminator or split point)
  isa::TerminatorKind term = isa::TerminatorKind::Fallthrough;
  std::set<uint32_t> succs;  // executed successor block starts

  bool operator==(const BlockRecord&) const = default;
};

struct RunMeta {
  std::string input_sha256;
  uint32_t quantum = 0;

  auto operator<=>(const RunMeta&) const = default;
};

struct TraceSet {
  std::string text_sha256;
  std::map<uint32_t, BlockRecord> blocks;  // keyed by start
  std::map<uint32_t, std::set<uint32_t>> indirect;  // site -> observed targets
  std::set<uint32_t> thread_entries;
  std::vector<RunMeta> runs;  // sorted, deduplicated

  bool operator==(const TraceSet&) const = default;
};

// Structural invariants: blocks non-overlapping, successor and indirect
// targets are recorded block starts, successors nonempty except for
// SyscallExit and Return (a Return with no recorded target ended a thread).
// Throws errc::verify.
void validate(const TraceSet& t);

// Union with maximal re-splitting.  All parts must carry the same
// text_sha256; disagreeing parts are rejected (errc::verify).  Idempotent,
// commutative, associative.
TraceSet merge(const std::vector<TraceSet>& parts);

// merge without the final validate().  The vm folds per-thread caches with
// this and then drops successors dangling into blocks that were still
// in flight when the program exited.
TraceSet merge_unchecked(const std::vector<TraceSet>& parts);

// Canonical JSON: sorted keys, fixed-width hex addresses.  load(save(t)) == t.
std::string to_json(const TraceSet& t);
TraceSet from_json(const std::string& text);
void save_file(const TraceSet& t, const std::string& path);
// When expected_text_sha256 is given, a digest mismatch is a load error.
TraceSet load_file(const std::string& path,
                   const std::optional<std::string>& expected_text_sha256 = std::nullopt);

}  // namespace winnow::trace
