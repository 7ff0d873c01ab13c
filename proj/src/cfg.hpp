#pragma once

// Whole-program CFG built from a merged trace plus the program text, and the
// heuristic-free static expansion strategies:
//
//   D    dynamic blocks only (the CFG as traced)
//   DS1  from each guard's unexplored side, statically decode code reachable
//        through B and B.cond only; exploration stops at BL/BLR/BR/RET
//   DS2  additionally follows BL into callees; a callee's RET continues at
//        the call site's resume point when the callee can return
//
// After expansion, Static nodes from which neither a Dynamic node nor a
// SyscallExit node is reachable are pruned, and their conditional branches
// revert to guard sites.  Expansion never invents targets for indirect
// branches beyond the dynamically recorded ones.
//
// DS2's call/return matching is flow-insensitive: per callee entry we compute
// a can-return summary (least fixpoint, so recursion converges) instead of
// enumerating call-stack states, and record matched (return node -> resume)
// pairs.  Pruning reachability runs over Flow edges plus those pairs.  The
// can-return traversal does not cross indirect branches.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "isa.hpp"
#include "trace.hpp"

namespace winnow::cfg {

enum class Provenance : uint8_t { Dynamic, Static };
enum class Strategy : uint8_t { D, DS1, DS2 };
enum class EdgeKind : uint8_t { Flow, Call, Resume };

const char* provenance_name(Provenance p);
const char* strategy_name(Strategy s);
std::optional<Strategy> strategy_from_name(const std::string& s);
const char* edge_kind_name(EdgeKind k);

struct Node {
  uint32_t start = 0;
  uint32_t end = 0;  // address of the last instruction
  isa::TerminatorKind term = isa::TerminatorKind::Fallthrough;
  Provenance prov = Provenance::Dynamic;

  bool operator==(const Node&) const = default;
};

struct Edge {
  uint32_t src = 0;  // node start
  uint32_t dst = 0;  // node start
  EdgeKind kind = EdgeKind::Flow;
  Provenance prov = Provenance::Dynamic;

  auto operator<=>(const Edge&) const = default;
};

// A conditional branch with exactly one explored side.
struct GuardSite {
  uint32_t site = 0;    // address of the B.cond instruction
  bool taken_unexplored = false;
  uint32_t target = 0;  // address of the unexplored side

  auto operator<=>(const GuardSite&) const = default;
};

struct Cfg {
  std::string text_sha256;
  uint32_t entry = 0;
  std::set<uint32_t> thread_entries;
  std::map<uint32_t, Node> nodes;  // keyed by start
  std::set<Edge> edges;
  std::vector<GuardSite> guards;  // sorted by site
  // Recorded indirect-branch targets, carried verbatim from the trace.
  std::map<uint32_t, std::set<uint32_t>> indirect;
  // DS2's matched pairs: Return node start -> resume addresses.
  std::map<uint32_t, std::set<uint32_t>> ret_pairs;

  bool operator==(const Cfg&) const = default;

  std::set<uint32_t> flow_targets(uint32_t src) const;
  bool has_node_at(uint32_t addr) const { return nodes.count(addr) != 0; }
};

// One Dynamic node per merged block, Flow edges from executed successors.
// Direct-branch targets are recomputed from the encodings and must agree
// with the recorded successors (errc::verify otherwise).
Cfg build_cfg(const trace::TraceSet& t, const isa::Program& prog);

// Structural invariants (endpoints exist, encodings agree, indirect edges
// are within the recorded targets, guards match the graph).  errc::verify.
void validate(const Cfg& c, const isa::Program& prog);

// Pure: D returns the input unchanged (same object).
Cfg expand(const Cfg& c, const isa::Program& prog, Strategy strategy);

// Percentage (0..100) of text instructions covered by nodes.
double coverage_percent(const Cfg& c, const isa::Program& prog);

// Canonical JSON and a graph-description export for visualization.
std::string to_json(const Cfg& c);
Cfg from_json(const std::string& text);
void save_file(const Cfg& c, const std::string& path);
Cfg load_file(const std::string& path,
              const std::optional<std::string>& expected_text_sha256 = std::nullopt);
std::string to_dot(const Cfg& c);

}  // namespace winnow::cfg
