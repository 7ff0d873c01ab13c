#pragma once

// Function recovery over an expanded CFG: call/resume edge marking, function
// partitioning, and promotion of boundary-crossing edges to calls.
//
// Call sites (BL/BLR blocks) have their flow out-edges re-kinded to Call and
// gain a Resume edge to the address after the call when that block exists.
// RET blocks whose recorded targets are all resume points of known call
// sites lose their out-edges (they are ordinary function returns); a RET
// with any other recorded target is treated as an indirect jump and keeps
// them.  Partitioning then assigns every node a function id by claim-first
// traversal (ascending entry address) over Flow and Resume edges from the
// entry set {program entry} ∪ thread entries ∪ call targets, and promotes
// every Flow edge that either targets a called block or crosses function
// ids.  Promotion repeats to fixpoint; each round strictly grows the Call
// edge set, so it terminates.  Every promoted edge is a tail call: its
// source does not link a return address, so no Resume edge is added.
//
// A function "never returns" when no true-return RET is reachable from its
// entry, stepping across call sites only through callees that can return
// (least fixpoint, so recursion converges) and across tail calls iff the
// callee can return.  Resume edges whose callees all never return are
// removed; blocks orphaned by such removals keep their assignment and the
// removed edges are reported.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cfg.hpp"

namespace winnow::structure {

// A call site with no materialized callee (possible when the callee block
// was never traced and no strategy recovered it).
struct UnresolvedCall {
  uint32_t site = 0;    // address of the BL/BLR instruction
  uint32_t target = 0;  // encoded callee for BL; 0 for BLR

  auto operator<=>(const UnresolvedCall&) const = default;
};

struct FunctionPartition {
  // Ascending entry order defines the function ids (entry i -> id i).
  // Includes synthetic heads for nodes unreachable from every real entry.
  std::set<uint32_t> func_entries;
  std::map<uint32_t, uint32_t> assignment;  // node start -> func id
  std::set<cfg::Edge> promoted;             // former Flow edges, now Call
  std::set<cfg::Edge> tail_calls;           // == promoted (no promotion resumes)

  uint32_t id_of(uint32_t entry) const;
};

struct StructuredProgram {
  cfg::Cfg cfg;  // post-promotion; Resume edges of never-returning callees removed
  FunctionPartition partition;
  std::set<uint32_t> never_returns;      // func ids
  std::set<cfg::Edge> dead_resumes;      // Resume edges removed by the analysis
  std::vector<UnresolvedCall> unresolved;
};

// Re-kind call-site out-edges and add resume edges; strip return edges that
// only target resume points.  The result still satisfies cfg::validate.
cfg::Cfg mark_calls(const cfg::Cfg& c, const isa::Program& prog,
                    std::vector<UnresolvedCall>* unresolved = nullptr);

// Partition + promotion fixpoint.  Expects a marked cfg.  never_returns and
// dead resume removal are not applied here.
StructuredProgram partition_and_promote(const cfg::Cfg& c);

// Function ids with no reachable true return.
std::set<uint32_t> compute_never_returns(const StructuredProgram& sp);

// The whole pass: mark, partition/promote, never-returns, resume removal.
StructuredProgram structure(const cfg::Cfg& c, const isa::Program& prog);

// Structural invariants: total assignment, no Flow edge across ids, call
// targets are entries, per-function reachability, resume/never-returns
// agreement.  errc::verify on violation.
void validate(const StructuredProgram& sp);

// Canonical JSON export (functions, members, promotions, never_returns).
std::string to_json(const StructuredProgram& sp);

// Inverse of to_json.  Function ids must be ordinal over the sorted entry
// set (as to_json writes them); tail_calls is rebuilt as a copy of the
// promoted set, which it equals by construction.
StructuredProgram from_json(const std::string& text);

void save_file(const StructuredProgram& sp, const std::string& path);
StructuredProgram load_file(
    const std::string& path,
    const std::optional<std::string>& expected_text_sha256 = {});

}  // namespace winnow::structure
