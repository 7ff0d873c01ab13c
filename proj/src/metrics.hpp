#pragma once
// Measurement suite for debloating results: instruction coverage, unique
// gadget census and code-size accounting.  Everything here is pure; reports
// can be produced for the original binary, the recovered graph and the
// rewritten binary independently and compared.

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "cfg.hpp"
#include "isa.hpp"

namespace winnow::metrics {

// Share of the original text that ended up inside some recovered block.
// `percent` keeps full precision; the render helpers round to two decimals.
struct CoverageReport {
  uint64_t lifted_instructions = 0;
  uint64_t total_text_instructions = 0;
  double percent = 100.0;
};

// Unique gadget census.  A gadget is a run of at most `max_len` decodable
// instructions that ends at the first control transfer on its path, where
// that transfer is indirect (RET, BR or BLR).  The fixed-width encoding
// means gadgets start only on word boundaries; there is no byte-offset
// overlap to scan for.  Sequences are keyed by their little-endian bytes,
// so identical runs at different addresses count once.
struct GadgetReport {
  uint32_t max_len = 6;
  std::set<std::string> gadgets;  // little-endian instruction bytes
  uint64_t count = 0;             // == gadgets.size()
  std::optional<double> percent_of_baseline;  // set when a baseline was given
};

// lifted = number of distinct instruction addresses inside any node's
// bounds (nodes never overlap), total = text words.  An empty text counts
// as fully covered.  Agrees with cfg::coverage_percent by construction.
CoverageReport coverage(const cfg::Cfg& c, const isa::Program& prog);

GadgetReport count_gadgets(const isa::Program& prog, uint32_t max_len = 6);

// Same census with percent_of_baseline filled in against a second program,
// typically the original binary the debloated one came from.
GadgetReport count_gadgets_vs(const isa::Program& prog,
                              const isa::Program& baseline,
                              uint32_t max_len = 6);

// .text size in bytes.
uint32_t code_size(const isa::Program& prog);

// 100 * value / baseline.  Two empty censuses compare as unchanged (100%);
// a non-empty value with an empty baseline has no meaningful ratio and
// throws errc::format.
double percent_of_baseline(uint64_t value, uint64_t baseline);

// Rendering: JSON for machines, aligned key/value lines for people.
// Percentages appear with two decimals in both.
std::string to_json(const CoverageReport& r);
std::string to_json(const GadgetReport& r);
std::string to_table(const CoverageReport& r);
std::string to_table(const GadgetReport& r);

// "82.35" — the one formatter every percentage goes through.
std::string percent_str(double p);

}  // namespace winnow::metrics
