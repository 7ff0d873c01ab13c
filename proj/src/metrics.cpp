#include "metrics.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace winnow::metrics {

using nlohmann::json;

namespace {

// Two-decimal rounding for JSON payloads, so serialized reports match what
// the tables and the CLI print.
double round2(double p) { return std::round(p * 100.0) / 100.0; }

std::string hex_bytes(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xF]);
  }
  return out;
}

}  // namespace

CoverageReport coverage(const cfg::Cfg& c, const isa::Program& prog) {
  CoverageReport r;
  r.total_text_instructions = prog.text.size();
  for (const auto& [_, n] : c.nodes)
    r.lifted_instructions += (n.end - n.start) / 4 + 1;
  r.percent = prog.text.empty()
                  ? 100.0
                  : 100.0 * (double)r.lifted_instructions /
                        (double)r.total_text_instructions;
  return r;
}

GadgetReport count_gadgets(const isa::Program& prog, uint32_t max_len) {
  GadgetReport rep;
  rep.max_len = max_len;
  const std::vector<uint32_t>& text = prog.text;
  for (size_t i = 0; i < text.size(); ++i) {
    // Walk forward until the first control transfer or undecodable word;
    // only an indirect transfer within the window makes a gadget, and no
    // longer window from i can be valid past that point.
    for (size_t k = 0; k < max_len && i + k < text.size(); ++k) {
      std::optional<isa::Instruction> ins = isa::decode(text[i + k]);
      if (!ins) break;
      isa::TerminatorKind kind = isa::classify_terminator(*ins);
      if (kind == isa::TerminatorKind::Fallthrough) continue;
      if (kind == isa::TerminatorKind::Return ||
          kind == isa::TerminatorKind::IndirectJump ||
          kind == isa::TerminatorKind::IndirectCall) {
        std::string bytes;
        bytes.reserve(4 * (k + 1));
        for (size_t j = 0; j <= k; ++j) {
          uint32_t w = text[i + j];
          for (int b = 0; b < 4; ++b)
            bytes.push_back((char)((w >> (8 * b)) & 0xFF));
        }
        rep.gadgets.insert(std::move(bytes));
      }
      break;
    }
  }
  rep.count = rep.gadgets.size();
  return rep;
}

GadgetReport count_gadgets_vs(const isa::Program& prog,
                              const isa::Program& baseline, uint32_t max_len) {
  GadgetReport rep = count_gadgets(prog, max_len);
  rep.percent_of_baseline =
      percent_of_baseline(rep.count, count_gadgets(baseline, max_len).count);
  return rep;
}

uint32_t code_size(const isa::Program& prog) { return prog.text_size(); }

double percent_of_baseline(uint64_t value, uint64_t baseline) {
  if (baseline == 0) {
    if (value == 0) return 100.0;
    throw error(errc::format, "no baseline to compare against");
  }
  return 100.0 * (double)value / (double)baseline;
}

std::string to_json(const CoverageReport& r) {
  json j;
  j["kind"] = "coverage";
  j["lifted_instructions"] = r.lifted_instructions;
  j["total_text_instructions"] = r.total_text_instructions;
  j["percent"] = round2(r.percent);
  return j.dump(2) + "\n";
}

std::string to_json(const GadgetReport& r) {
  json j;
  j["kind"] = "gadgets";
  j["max_len"] = r.max_len;
  j["count"] = r.count;
  j["gadgets"] = json::array();
  for (const std::string& g : r.gadgets) j["gadgets"].push_back(hex_bytes(g));
  if (r.percent_of_baseline)
    j["percent_of_baseline"] = round2(*r.percent_of_baseline);
  return j.dump(2) + "\n";
}

std::string to_table(const CoverageReport& r) {
  std::string out;
  out += "lifted instructions   " + std::to_string(r.lifted_instructions) +
         "\n";
  out += "total instructions    " + std::to_string(r.total_text_instructions) +
         "\n";
  out += "coverage              " + percent_str(r.percent) + "%\n";
  return out;
}

std::string to_table(const GadgetReport& r) {
  std::string out;
  out += "max gadget length     " + std::to_string(r.max_len) + "\n";
  out += "unique gadgets        " + std::to_string(r.count) + "\n";
  if (r.percent_of_baseline)
    out += "vs baseline           " + percent_str(*r.percent_of_baseline) +
           "%\n";
  return out;
}

std::string percent_str(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", p);
  return buf;
}

}  // namespace winnow::metrics
