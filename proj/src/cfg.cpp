#include "cfg.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common.hpp"
#include "json_util.hpp"

namespace winnow::cfg {

using nlohmann::json;
using isa::TerminatorKind;

const char* provenance_name(Provenance p) {
  return p == Provenance::Dynamic ? "dynamic" : "static";
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::D: return "d";
    case Strategy::DS1: return "ds1";
    case Strategy::DS2: return "ds2";
  }
  return "?";
}

std::optional<Strategy> strategy_from_name(const std::string& s) {
  if (s == "d") return Strategy::D;
  if (s == "ds1") return Strategy::DS1;
  if (s == "ds2") return Strategy::DS2;
  return std::nullopt;
}

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::Flow: return "flow";
    case EdgeKind::Call: return "call";
    case EdgeKind::Resume: return "resume";
  }
  return "?";
}

std::set<uint32_t> Cfg::flow_targets(uint32_t src) const {
  std::set<uint32_t> out;
  for (auto it = edges.lower_bound(Edge{src, 0, EdgeKind::Flow, Provenance::Dynamic});
       it != edges.end() && it->src == src; ++it)
    if (it->kind == EdgeKind::Flow) out.insert(it->dst);
  return out;
}

namespace {

isa::Instruction ins_at(const isa::Program& prog, uint32_t addr) {
  auto d = isa::decode(prog.word_at(addr));
  if (!d)
    throw error(errc::verify, "node covers undecodable word at " + hex32(addr));
  return *d;
}

std::vector<GuardSite> compute_guards(const Cfg& c, const isa::Program& prog) {
  std::vector<GuardSite> out;
  for (const auto& [s, n] : c.nodes) {
    if (n.term != TerminatorKind::DirectCondJump) continue;
    uint32_t taken = isa::branch_target(n.end, ins_at(prog, n.end));
    uint32_t fall = n.end + 4;
    if (taken == fall) continue;  // both sides are the same address
    std::set<uint32_t> outs = c.flow_targets(s);
    bool has_taken = outs.count(taken) != 0, has_fall = outs.count(fall) != 0;
    if (has_taken && !has_fall) out.push_back({n.end, false, fall});
    else if (has_fall && !has_taken) out.push_back({n.end, true, taken});
  }
  return out;  // nodes ascend by start, so sites ascend too
}

}  // namespace

Cfg build_cfg(const trace::TraceSet& t, const isa::Program& prog) {
  trace::validate(t);
  if (t.text_sha256 != prog.text_sha256())
    throw error(errc::verify, "trace was recorded against a different binary");
  Cfg c;
  c.text_sha256 = t.text_sha256;
  c.entry = prog.entry;
  c.thread_entries = t.thread_entries;
  c.indirect = t.indirect;
  for (const auto& [s, b] : t.blocks) {
    c.nodes.emplace(s, Node{b.start, b.end, b.term, Provenance::Dynamic});
    for (uint32_t succ : b.succs)
      c.edges.insert({s, succ, EdgeKind::Flow, Provenance::Dynamic});
  }
  if (!c.nodes.count(c.entry))
    throw error(errc::verify, "trace does not cover the program entry");
  c.guards = compute_guards(c, prog);
  validate(c, prog);
  return c;
}

void validate(const Cfg& c, const isa::Program& prog) {
  if (c.text_sha256 != prog.text_sha256())
    throw error(errc::verify, "cfg belongs to a different binary");
  uint32_t prev_end = 0;
  bool first = true;
  for (const auto& [s, n] : c.nodes) {
    if (n.start != s || n.end < n.start)
      throw error(errc::verify, "bad node bounds at " + hex32(s));
    if (!prog.contains_text(n.start) || !prog.contains_text(n.end))
      throw error(errc::verify, "node " + hex32(s) + " outside text");
    if (!first && s <= prev_end)
      throw error(errc::verify, "overlapping nodes at " + hex32(s));
    prev_end = n.end;
    first = false;
    for (uint32_t a = n.start; a < n.end; a += 4)
      if (isa::classify_terminator(ins_at(prog, a)) != TerminatorKind::Fallthrough)
        throw error(errc::verify, "terminator inside node at " + hex32(a));
    if (isa::classify_terminator(ins_at(prog, n.end)) != n.term)
      throw error(errc::verify, "node " + hex32(s) + " disagrees with its encoding");
  }
  if (!c.nodes.count(c.entry)) throw error(errc::verify, "entry is not a node");
  for (uint32_t e : c.thread_entries)
    if (!c.nodes.count(e)) throw error(errc::verify, "thread entry is not a node");

  for (const Edge& e : c.edges) {
    if (!c.nodes.count(e.src) || !c.nodes.count(e.dst))
      throw error(errc::verify, "dangling edge " + hex32(e.src) + " -> " + hex32(e.dst));
    if (e.kind != EdgeKind::Flow) continue;  // Call/Resume are checked by structuring
    const Node& u = c.nodes.at(e.src);
    switch (u.term) {
      case TerminatorKind::Fallthrough:
        if (e.dst != u.end + 4)
          throw error(errc::verify, "fallthrough edge skips at " + hex32(e.src));
        break;
      case TerminatorKind::DirectJump:
      case TerminatorKind::DirectCall:
        if (e.dst != isa::branch_target(u.end, ins_at(prog, u.end)))
          throw error(errc::verify,
                      "recorded successor contradicts encoding at " + hex32(u.end));
        break;
      case TerminatorKind::DirectCondJump: {
        uint32_t taken = isa::branch_target(u.end, ins_at(prog, u.end));
        if (e.dst != taken && e.dst != u.end + 4)
          throw error(errc::verify,
                      "recorded successor contradicts encoding at " + hex32(u.end));
        break;
      }
      case TerminatorKind::IndirectJump:
      case TerminatorKind::IndirectCall:
      case TerminatorKind::Return: {
        auto it = c.indirect.find(u.end);
        if (it == c.indirect.end() || !it->second.count(e.dst))
          throw error(errc::verify,
                      "indirect edge beyond recorded targets at " + hex32(u.end));
        break;
      }
      case TerminatorKind::SyscallExit:
        throw error(errc::verify, "edge out of an exit node at " + hex32(e.src));
    }
  }
  for (const auto& [site, targets] : c.indirect)
    for (uint32_t tgt : targets)
      if (!c.nodes.count(tgt))
        throw error(errc::verify, "indirect target " + hex32(tgt) + " is not a node");
  for (const auto& [rn, resumes] : c.ret_pairs) {
    auto it = c.nodes.find(rn);
    if (it == c.nodes.end() || it->second.term != TerminatorKind::Return)
      throw error(errc::verify, "ret pair at " + hex32(rn) + " is not a Return node");
    for (uint32_t r : resumes)
      if (!c.nodes.count(r))
        throw error(errc::verify, "ret pair resume " + hex32(r) + " is not a node");
  }
  if (c.guards != compute_guards(c, prog))
    throw error(errc::verify, "stale guard list");
}

double coverage_percent(const Cfg& c, const isa::Program& prog) {
  if (prog.text.empty()) return 100.0;
  uint64_t covered = 0;
  for (const auto& [_, n] : c.nodes) covered += (n.end - n.start) / 4 + 1;
  return 100.0 * (double)covered / (double)prog.text.size();
}

// ---------------------------------------------------------------------------
// expansion

namespace {

class Expander {
 public:
  Expander(Cfg cfg, const isa::Program& prog, Strategy strat)
      : c_(std::move(cfg)), prog_(prog), strat_(strat) {}

  Cfg run() {
    for (const GuardSite& g : c_.guards) link(g.site, g.target);
    while (true) {
      while (!work_.empty()) {
        uint32_t addr = *work_.begin();
        work_.erase(work_.begin());
        process(addr);
      }
      if (!update_summaries()) break;
    }
    prune();
    c_.guards = compute_guards(c_, prog_);
    validate(c_, prog_);
    return std::move(c_);
  }

 private:
  uint32_t node_start_containing(uint32_t addr) const {
    auto it = c_.nodes.upper_bound(addr);
    if (it == c_.nodes.begin()) throw error(errc::internal, "no node at " + hex32(addr));
    --it;
    if (it->second.end < addr) throw error(errc::internal, "no node at " + hex32(addr));
    return it->first;
  }

  void split_node(uint32_t s, uint32_t m) {
    Node orig = c_.nodes.at(s);
    c_.nodes[s] = {s, m - 4, TerminatorKind::Fallthrough, orig.prov};
    c_.nodes[m] = {m, orig.end, orig.term, orig.prov};
    std::vector<Edge> moved;
    for (auto it = c_.edges.lower_bound(Edge{s, 0, EdgeKind::Flow, Provenance::Dynamic});
         it != c_.edges.end() && it->src == s;) {
      moved.push_back(*it);
      it = c_.edges.erase(it);
    }
    for (Edge e : moved) {
      e.src = m;
      c_.edges.insert(e);
    }
    c_.edges.insert({s, m, EdgeKind::Flow, orig.prov});
    if (orig.term == TerminatorKind::Return) {
      if (auto h = c_.ret_pairs.extract(s); !h.empty()) {
        h.key() = m;
        c_.ret_pairs.insert(std::move(h));
      }
    }
    if (walked_.count(s)) walked_.insert(m);
  }

  // Makes a node begin exactly at `addr`: reuses/splits an existing node or
  // statically decodes fresh code.  nullopt when the path is unexplorable
  // (unaligned, off text, or reaches an undecodable word).
  std::optional<uint32_t> ensure_node(uint32_t addr) {
    if (addr & 3) return std::nullopt;
    if (c_.nodes.count(addr)) return addr;
    auto it = c_.nodes.upper_bound(addr);
    if (it != c_.nodes.begin()) {
      auto prev = std::prev(it);
      if (prev->second.end >= addr) {
        split_node(prev->first, addr);
        return addr;
      }
    }
    uint32_t cur = addr;
    while (true) {
      if (!prog_.contains_text(cur)) return std::nullopt;
      auto d = isa::decode(prog_.word_at(cur));
      if (!d) return std::nullopt;
      if (isa::classify_terminator(*d) != TerminatorKind::Fallthrough) {
        c_.nodes.emplace(addr, Node{addr, cur, isa::classify_terminator(*d), Provenance::Static});
        return addr;
      }
      if (c_.nodes.count(cur + 4)) {
        c_.nodes.emplace(addr, Node{addr, cur, TerminatorKind::Fallthrough, Provenance::Static});
        return addr;
      }
      cur += 4;
    }
  }

  // Materialize `target` and connect it to the node holding the terminator
  // at `term_addr` (resolved after the possible split).
  void link(uint32_t term_addr, uint32_t target) {
    auto t = ensure_node(target);
    if (!t) return;
    uint32_t src = node_start_containing(term_addr);
    c_.edges.insert({src, target, EdgeKind::Flow, Provenance::Static});
    work_.insert(target);
  }

  void process(uint32_t addr) {
    auto st = ensure_node(addr);
    if (!st) return;
    if (!walked_.insert(*st).second) return;
    const Node n = c_.nodes.at(*st);  // copy: links below may split nodes
    bool dyn = n.prov == Provenance::Dynamic;
    switch (n.term) {
      case TerminatorKind::Fallthrough:
        if (dyn) enqueue_existing(n.start);
        else link(n.end, n.end + 4);
        break;
      case TerminatorKind::DirectJump:
        if (dyn) enqueue_existing(n.start);
        else link(n.end, isa::branch_target(n.end, ins_at(prog_, n.end)));
        break;
      case TerminatorKind::DirectCondJump:
        if (dyn) {
          enqueue_existing(n.start);  // the unexplored side is its own guard seed
        } else {
          link(n.end, isa::branch_target(n.end, ins_at(prog_, n.end)));
          link(n.end, n.end + 4);
        }
        break;
      case TerminatorKind::DirectCall:
        if (strat_ == Strategy::DS2) {
          uint32_t callee = isa::branch_target(n.end, ins_at(prog_, n.end));
          call_sites_[callee].insert(n.end + 4);
          if (dyn) enqueue_existing(n.start);
          else link(n.end, callee);
        }
        break;  // DS1 stops at calls
      case TerminatorKind::IndirectJump:
      case TerminatorKind::IndirectCall:
      case TerminatorKind::Return:
        // only dynamically recorded targets may be followed
        if (dyn && strat_ == Strategy::DS2) enqueue_existing(n.start);
        break;
      case TerminatorKind::SyscallExit:
        break;
    }
  }

  void enqueue_existing(uint32_t src) {
    for (uint32_t t : c_.flow_targets(src)) work_.insert(t);
  }

  // Intra-frame reachability from callee entry `g`: which Return nodes are
  // reachable without leaving the frame (calls are crossed through their
  // resume only when the callee can return).
  std::set<uint32_t> frame_returns(uint32_t g, const std::set<uint32_t>& can_ret) const {
    std::set<uint32_t> seen, rets;
    std::deque<uint32_t> q{g};
    while (!q.empty()) {
      uint32_t s = q.front();
      q.pop_front();
      if (!seen.insert(s).second) continue;
      auto it = c_.nodes.find(s);
      if (it == c_.nodes.end()) continue;
      const Node& n = it->second;
      switch (n.term) {
        case TerminatorKind::Fallthrough:
        case TerminatorKind::DirectJump:
        case TerminatorKind::DirectCondJump:
          for (uint32_t t : c_.flow_targets(s)) q.push_back(t);
          break;
        case TerminatorKind::DirectCall: {
          uint32_t callee = isa::branch_target(n.end, ins_at(prog_, n.end));
          if (can_ret.count(callee) && c_.nodes.count(n.end + 4)) q.push_back(n.end + 4);
          break;
        }
        case TerminatorKind::Return:
          rets.insert(s);
          break;
        case TerminatorKind::IndirectJump:   // conservative: a frame path does
        case TerminatorKind::IndirectCall:   // not cross indirect branches
        case TerminatorKind::SyscallExit:
          break;
      }
    }
    return rets;
  }

  // Recompute can-return summaries; install matched pairs and materialize
  // resume points.  True when anything changed.
  bool update_summaries() {
    if (strat_ != Strategy::DS2) return false;
    std::set<uint32_t> can_ret;
    std::map<uint32_t, std::set<uint32_t>> rets;
    bool stable = false;
    while (!stable) {
      stable = true;
      for (const auto& [g, _] : call_sites_) {
        if (!c_.nodes.count(g)) continue;
        std::set<uint32_t> r = frame_returns(g, can_ret);
        if (r != rets[g]) {
          rets[g] = r;
          stable = false;
        }
        if (!r.empty() && can_ret.insert(g).second) stable = false;
      }
    }
    bool changed = false;
    for (const auto& [g, resumes] : call_sites_) {
      if (!can_ret.count(g)) continue;
      for (uint32_t r : resumes) {
        if (dead_resumes_.count(r)) continue;
        if (!ensure_node(r)) {
          dead_resumes_.insert(r);
          continue;
        }
        if (!walked_.count(r)) {
          work_.insert(r);
          changed = true;
        }
        for (uint32_t rn : rets[g])
          if (c_.ret_pairs[rn].insert(r).second) changed = true;
      }
    }
    return changed;
  }

  void prune() {
    // targets: Dynamic nodes and exit nodes, reached over Flow edges plus
    // the matched call/return pairs
    std::map<uint32_t, std::set<uint32_t>> rev;
    for (const Edge& e : c_.edges)
      if (e.kind == EdgeKind::Flow) rev[e.dst].insert(e.src);
    for (const auto& [rn, resumes] : c_.ret_pairs)
      for (uint32_t r : resumes) rev[r].insert(rn);
    std::deque<uint32_t> q;
    std::set<uint32_t> reach;
    for (const auto& [s, n] : c_.nodes)
      if (n.prov == Provenance::Dynamic || n.term == TerminatorKind::SyscallExit) {
        q.push_back(s);
        reach.insert(s);
      }
    while (!q.empty()) {
      uint32_t s = q.front();
      q.pop_front();
      auto it = rev.find(s);
      if (it == rev.end()) continue;
      for (uint32_t p : it->second)
        if (reach.insert(p).second) q.push_back(p);
    }
    for (auto it = c_.nodes.begin(); it != c_.nodes.end();) {
      if (it->second.prov == Provenance::Static && !reach.count(it->first))
        it = c_.nodes.erase(it);
      else
        ++it;
    }
    for (auto it = c_.edges.begin(); it != c_.edges.end();)
      it = (!c_.nodes.count(it->src) || !c_.nodes.count(it->dst)) ? c_.edges.erase(it)
                                                                  : std::next(it);
    for (auto it = c_.ret_pairs.begin(); it != c_.ret_pairs.end();) {
      if (!c_.nodes.count(it->first)) {
        it = c_.ret_pairs.erase(it);
        continue;
      }
      std::set<uint32_t>& rs = it->second;
      for (auto r = rs.begin(); r != rs.end();)
        r = c_.nodes.count(*r) ? std::next(r) : rs.erase(r);
      it = rs.empty() ? c_.ret_pairs.erase(it) : std::next(it);
    }
  }

  Cfg c_;
  const isa::Program& prog_;
  Strategy strat_;
  std::set<uint32_t> work_;
  std::set<uint32_t> walked_;
  std::set<uint32_t> dead_resumes_;
  std::map<uint32_t, std::set<uint32_t>> call_sites_;  // callee entry -> resumes
};

}  // namespace

Cfg expand(const Cfg& c, const isa::Program& prog, Strategy strategy) {
  validate(c, prog);
  if (strategy == Strategy::D) return c;
  return Expander(c, prog, strategy).run();
}

// ---------------------------------------------------------------------------
// serialization

std::string to_json(const Cfg& c) {
  json j;
  j["kind"] = "cfg";
  j["version"] = 1;
  j["text_sha256"] = c.text_sha256;
  j["entry"] = hex32(c.entry);
  j["thread_entries"] = json::array();
  for (uint32_t e : c.thread_entries) j["thread_entries"].push_back(hex32(e));
  j["nodes"] = json::array();
  for (const auto& [_, n] : c.nodes)
    j["nodes"].push_back({{"start", hex32(n.start)},
                          {"end", hex32(n.end)},
                          {"term", isa::terminator_name(n.term)},
                          {"prov", provenance_name(n.prov)}});
  j["edges"] = json::array();
  for (const Edge& e : c.edges)
    j["edges"].push_back({{"src", hex32(e.src)},
                          {"dst", hex32(e.dst)},
                          {"kind", edge_kind_name(e.kind)},
                          {"prov", provenance_name(e.prov)}});
  j["guards"] = json::array();
  for (const GuardSite& g : c.guards)
    j["guards"].push_back({{"site", hex32(g.site)},
                           {"unexplored", g.taken_unexplored ? "taken" : "fallthrough"},
                           {"target", hex32(g.target)}});
  j["indirect"] = json::object();
  for (const auto& [site, targets] : c.indirect) {
    json arr = json::array();
    for (uint32_t t : targets) arr.push_back(hex32(t));
    j["indirect"][hex32(site)] = arr;
  }
  j["ret_pairs"] = json::object();
  for (const auto& [rn, resumes] : c.ret_pairs) {
    json arr = json::array();
    for (uint32_t r : resumes) arr.push_back(hex32(r));
    j["ret_pairs"][hex32(rn)] = arr;
  }
  return j.dump(2) + "\n";
}

Cfg from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw error(errc::parse, std::string("bad cfg JSON: ") + e.what());
  }
  try {
    if (j.value("kind", "") != "cfg") throw error(errc::format, "not a cfg file");
    if (j.value("version", 0) != 1) throw error(errc::format, "unsupported cfg version");
    Cfg c;
    c.text_sha256 = j.at("text_sha256").get<std::string>();
    c.entry = parse_addr(j.at("entry"));
    for (const json& je : j.at("thread_entries")) c.thread_entries.insert(parse_addr(je));
    for (const json& jn : j.at("nodes")) {
      Node n;
      n.start = parse_addr(jn.at("start"));
      n.end = parse_addr(jn.at("end"));
      auto k = isa::terminator_from_name(jn.at("term").get<std::string>());
      if (!k) throw error(errc::format, "bad terminator kind");
      n.term = *k;
      std::string p = jn.at("prov").get<std::string>();
      if (p != "dynamic" && p != "static") throw error(errc::format, "bad provenance");
      n.prov = p == "dynamic" ? Provenance::Dynamic : Provenance::Static;
      if (!c.nodes.emplace(n.start, n).second)
        throw error(errc::format, "duplicate node " + hex32(n.start));
    }
    for (const json& je : j.at("edges")) {
      Edge e;
      e.src = parse_addr(je.at("src"));
      e.dst = parse_addr(je.at("dst"));
      std::string k = je.at("kind").get<std::string>();
      if (k == "flow") e.kind = EdgeKind::Flow;
      else if (k == "call") e.kind = EdgeKind::Call;
      else if (k == "resume") e.kind = EdgeKind::Resume;
      else throw error(errc::format, "bad edge kind");
      std::string p = je.at("prov").get<std::string>();
      if (p != "dynamic" && p != "static") throw error(errc::format, "bad provenance");
      e.prov = p == "dynamic" ? Provenance::Dynamic : Provenance::Static;
      c.edges.insert(e);
    }
    for (const json& jg : j.at("guards")) {
      GuardSite g;
      g.site = parse_addr(jg.at("site"));
      std::string u = jg.at("unexplored").get<std::string>();
      if (u != "taken" && u != "fallthrough") throw error(errc::format, "bad guard side");
      g.taken_unexplored = u == "taken";
      g.target = parse_addr(jg.at("target"));
      c.guards.push_back(g);
    }
    for (const auto& [site, arr] : j.at("indirect").items()) {
      uint32_t s = parse_addr(json(site));
      for (const json& jt : arr) c.indirect[s].insert(parse_addr(jt));
    }
    for (const auto& [rn, arr] : j.at("ret_pairs").items()) {
      uint32_t s = parse_addr(json(rn));
      for (const json& jr : arr) c.ret_pairs[s].insert(parse_addr(jr));
    }
    return c;
  } catch (const json::exception& e) {
    throw error(errc::format, std::string("malformed cfg file: ") + e.what());
  }
}

void save_file(const Cfg& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open for writing: " + path);
  std::string s = to_json(c);
  f.write(s.data(), (std::streamsize)s.size());
  if (!f) throw error(errc::io, "write failed: " + path);
}

Cfg load_file(const std::string& path, const std::optional<std::string>& expected_text_sha256) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Cfg c = from_json(ss.str());
  if (expected_text_sha256 && c.text_sha256 != *expected_text_sha256)
    throw error(errc::verify, "cfg " + path + " belongs to a different binary");
  return c;
}

std::string to_dot(const Cfg& c) {
  std::ostringstream out;
  out << "digraph cfg {\n  node [shape=box, fontname=\"monospace\"];\n";
  for (const auto& [_, n] : c.nodes) {
    out << "  \"" << hex32(n.start) << "\" [label=\"" << hex32(n.start) << " .. "
        << hex32(n.end) << "\\n" << isa::terminator_name(n.term) << "\"";
    if (n.prov == Provenance::Static) out << ", style=dashed";
    out << "];\n";
  }
  for (const Edge& e : c.edges) {
    out << "  \"" << hex32(e.src) << "\" -> \"" << hex32(e.dst) << "\"";
    if (e.kind == EdgeKind::Call) out << " [color=blue, label=\"call\"]";
    else if (e.kind == EdgeKind::Resume) out << " [color=gray, style=dotted, label=\"resume\"]";
    else if (e.prov == Provenance::Static) out << " [style=dashed]";
    out << ";\n";
  }
  for (const GuardSite& g : c.guards)
    out << "  \"guard_" << hex32(g.site) << "\" [shape=diamond, label=\"guard " << hex32(g.site)
        << "\\n-> " << hex32(g.target) << "\"];\n";
  out << "}\n";
  return out.str();
}

}  // namespace winnow::cfg
