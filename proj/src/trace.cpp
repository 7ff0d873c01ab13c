#include "trace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common.hpp"
#include "json_util.hpp"

namespace winnow::trace {

using nlohmann::json;

void validate(const TraceSet& t) {
  uint32_t prev_end = 0;
  bool first = true;
  for (const auto& [start, b] : t.blocks) {
    if (b.start != start) throw error(errc::verify, "block key/start mismatch");
    if (b.end < b.start) throw error(errc::verify, "block end before start");
    if ((b.start & 3) || (b.end & 3)) throw error(errc::verify, "unaligned block bounds");
    if (!first && start <= prev_end)
      throw error(errc::verify, "overlapping blocks at " + hex32(start));
    prev_end = b.end;
    first = false;
    if (b.succs.empty() && b.term != isa::TerminatorKind::SyscallExit &&
        b.term != isa::TerminatorKind::Return)
      throw error(errc::verify, "block " + hex32(start) + " has no successor");
    for (uint32_t s : b.succs)
      if (!t.blocks.count(s))
        throw error(errc::verify,
                    "successor " + hex32(s) + " of " + hex32(start) + " is not a block");
  }
  for (const auto& [site, targets] : t.indirect) {
    if (targets.empty()) throw error(errc::verify, "empty indirect target set");
    for (uint32_t tgt : targets)
      if (!t.blocks.count(tgt))
        throw error(errc::verify, "indirect target " + hex32(tgt) + " is not a block");
  }
  for (uint32_t e : t.thread_entries)
    if (!t.blocks.count(e))
      throw error(errc::verify, "thread entry " + hex32(e) + " is not a block");
}

namespace {

// Splits every block of `part` at the boundary addresses in `starts`, then
// folds the segments into `out`.
void fold_part(std::map<uint32_t, BlockRecord>& out, const TraceSet& part,
               const std::set<uint32_t>& starts) {
  for (const auto& [_, b] : part.blocks) {
    std::vector<uint32_t> cuts;  // segment start addresses
    cuts.push_back(b.start);
    for (auto it = starts.upper_bound(b.start); it != starts.end() && *it <= b.end; ++it)
      cuts.push_back(*it);
    for (size_t i = 0; i < cuts.size(); i++) {
      BlockRecord seg;
      seg.start = cuts[i];
      bool last = i + 1 == cuts.size();
      seg.end = last ? b.end : cuts[i + 1] - 4;
      seg.term = last ? b.term : isa::TerminatorKind::Fallthrough;
      if (last) seg.succs = b.succs;
      else seg.succs = {cuts[i + 1]};
      auto [it, inserted] = out.emplace(seg.start, seg);
      if (!inserted) {
        BlockRecord& ex = it->second;
        if (ex.end != seg.end || ex.term != seg.term)
          throw error(errc::verify, "inconsistent traces: block " + hex32(seg.start) +
                                        " has conflicting bounds");
        ex.succs.insert(seg.succs.begin(), seg.succs.end());
      }
    }
  }
}

}  // namespace

TraceSet merge_unchecked(const std::vector<TraceSet>& parts) {
  if (parts.empty()) throw error(errc::verify, "merge of zero traces");
  TraceSet out;
  out.text_sha256 = parts[0].text_sha256;
  for (const TraceSet& p : parts)
    if (p.text_sha256 != out.text_sha256)
      throw error(errc::verify, "cannot merge traces of different binaries");

  std::set<uint32_t> starts;
  for (const TraceSet& p : parts)
    for (const auto& [s, _] : p.blocks) starts.insert(s);

  for (const TraceSet& p : parts) {
    fold_part(out.blocks, p, starts);
    for (const auto& [site, targets] : p.indirect)
      out.indirect[site].insert(targets.begin(), targets.end());
    out.thread_entries.insert(p.thread_entries.begin(), p.thread_entries.end());
    out.runs.insert(out.runs.end(), p.runs.begin(), p.runs.end());
  }
  std::sort(out.runs.begin(), out.runs.end());
  out.runs.erase(std::unique(out.runs.begin(), out.runs.end()), out.runs.end());
  return out;
}

TraceSet merge(const std::vector<TraceSet>& parts) {
  TraceSet out = merge_unchecked(parts);
  validate(out);
  return out;
}

std::string to_json(const TraceSet& t) {
  json j;
  j["kind"] = "trace";
  j["version"] = 1;
  j["text_sha256"] = t.text_sha256;
  j["runs"] = json::array();
  for (const RunMeta& r : t.runs)
    j["runs"].push_back({{"input_sha256", r.input_sha256}, {"quantum", r.quantum}});
  j["thread_entries"] = json::array();
  for (uint32_t e : t.thread_entries) j["thread_entries"].push_back(hex32(e));
  j["blocks"] = json::array();
  for (const auto& [_, b] : t.blocks) {
    json jb;
    jb["start"] = hex32(b.start);
    jb["end"] = hex32(b.end);
    jb["term"] = isa::terminator_name(b.term);
    jb["succ"] = json::array();
    for (uint32_t s : b.succs) jb["succ"].push_back(hex32(s));
    j["blocks"].push_back(jb);
  }
  j["indirect"] = json::object();
  for (const auto& [site, targets] : t.indirect) {
    json arr = json::array();
    for (uint32_t tgt : targets) arr.push_back(hex32(tgt));
    j["indirect"][hex32(site)] = arr;
  }
  return j.dump(2) + "\n";
}

TraceSet from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw error(errc::parse, std::string("bad trace JSON: ") + e.what());
  }
  try {
    if (j.value("kind", "") != "trace") throw error(errc::format, "not a trace file");
    if (j.value("version", 0) != 1) throw error(errc::format, "unsupported trace version");
    TraceSet t;
    t.text_sha256 = j.at("text_sha256").get<std::string>();
    for (const json& jr : j.at("runs"))
      t.runs.push_back({jr.at("input_sha256").get<std::string>(),
                        jr.at("quantum").get<uint32_t>()});
    for (const json& je : j.at("thread_entries")) t.thread_entries.insert(parse_addr(je));
    for (const json& jb : j.at("blocks")) {
      BlockRecord b;
      b.start = parse_addr(jb.at("start"));
      b.end = parse_addr(jb.at("end"));
      auto k = isa::terminator_from_name(jb.at("term").get<std::string>());
      if (!k) throw error(errc::format, "bad terminator kind");
      b.term = *k;
      for (const json& js : jb.at("succ")) b.succs.insert(parse_addr(js));
      if (!t.blocks.emplace(b.start, b).second)
        throw error(errc::format, "duplicate block " + hex32(b.start));
    }
    for (const auto& [site, arr] : j.at("indirect").items()) {
      json jsite = site;
      uint32_t s = parse_addr(jsite);
      for (const json& jt : arr) t.indirect[s].insert(parse_addr(jt));
    }
    std::sort(t.runs.begin(), t.runs.end());
    t.runs.erase(std::unique(t.runs.begin(), t.runs.end()), t.runs.end());
    validate(t);
    return t;
  } catch (const json::exception& e) {
    throw error(errc::format, std::string("malformed trace file: ") + e.what());
  }
}

void save_file(const TraceSet& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open for writing: " + path);
  std::string s = to_json(t);
  f.write(s.data(), (std::streamsize)s.size());
  if (!f) throw error(errc::io, "write failed: " + path);
}

TraceSet load_file(const std::string& path,
                   const std::optional<std::string>& expected_text_sha256) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  TraceSet t = from_json(ss.str());
  if (expected_text_sha256 && t.text_sha256 != *expected_text_sha256)
    throw error(errc::verify, "trace " + path + " was recorded against a different binary");
  return t;
}

}  // namespace winnow::trace
