#include "structure.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common.hpp"
#include "json_util.hpp"

namespace winnow::structure {

using cfg::Cfg;
using cfg::Edge;
using cfg::EdgeKind;
using cfg::Provenance;
using isa::TerminatorKind;
using nlohmann::json;

uint32_t FunctionPartition::id_of(uint32_t entry) const {
  auto it = func_entries.find(entry);
  if (it == func_entries.end()) throw error(errc::internal, "not a function entry");
  return (uint32_t)std::distance(func_entries.begin(), it);
}

namespace {

std::vector<Edge> out_edges(const Cfg& g, uint32_t src, EdgeKind kind) {
  std::vector<Edge> out;
  for (auto it = g.edges.lower_bound(Edge{src, 0, EdgeKind::Flow, Provenance::Dynamic});
       it != g.edges.end() && it->src == src; ++it)
    if (it->kind == kind) out.push_back(*it);
  return out;
}

bool is_call_site(TerminatorKind t) {
  return t == TerminatorKind::DirectCall || t == TerminatorKind::IndirectCall;
}

}  // namespace

cfg::Cfg mark_calls(const Cfg& c, const isa::Program& prog,
                    std::vector<UnresolvedCall>* unresolved) {
  Cfg g = c;
  std::set<uint32_t> resume_points;
  for (const auto& [_, n] : g.nodes)
    if (is_call_site(n.term)) resume_points.insert(n.end + 4);

  for (const auto& [s, n] : g.nodes) {
    if (is_call_site(n.term)) {
      std::vector<Edge> flows = out_edges(g, s, EdgeKind::Flow);
      for (const Edge& e : flows) {
        g.edges.erase(e);
        g.edges.insert({e.src, e.dst, EdgeKind::Call, e.prov});
      }
      if (flows.empty()) {
        uint32_t target = 0;
        if (n.term == TerminatorKind::DirectCall) {
          auto ins = isa::decode(prog.word_at(n.end));
          if (ins) target = isa::branch_target(n.end, *ins);
        }
        if (unresolved) unresolved->push_back({n.end, target});
      } else if (g.nodes.count(n.end + 4)) {
        g.edges.insert({s, n.end + 4, EdgeKind::Resume, n.prov});
      }
    } else if (n.term == TerminatorKind::Return) {
      std::vector<Edge> flows = out_edges(g, s, EdgeKind::Flow);
      bool all_resume = std::all_of(flows.begin(), flows.end(), [&](const Edge& e) {
        return resume_points.count(e.dst) != 0;
      });
      // Returning into anything but a resume point means this RET acts as a
      // computed jump; keep the edges so promotion sees them.
      if (all_resume)
        for (const Edge& e : flows) g.edges.erase(e);
    }
  }
  return g;
}

namespace {

// Claim-first traversal: every entry owns its own id; entries in ascending
// order then claim whatever they reach over Flow and Resume edges.  Nodes no
// real entry reaches become synthetic heads so the assignment stays total.
struct Assignment {
  std::set<uint32_t> entries;
  std::map<uint32_t, uint32_t> head;  // node -> owning entry address
};

Assignment assign_ids(const Cfg& g, const std::set<uint32_t>& call_targets) {
  Assignment a;
  if (g.nodes.count(g.entry)) a.entries.insert(g.entry);
  for (uint32_t t : g.thread_entries)
    if (g.nodes.count(t)) a.entries.insert(t);
  for (uint32_t t : call_targets)
    if (g.nodes.count(t)) a.entries.insert(t);

  std::map<uint32_t, std::vector<uint32_t>> adj;
  for (const Edge& e : g.edges)
    if (e.kind == EdgeKind::Flow || e.kind == EdgeKind::Resume)
      adj[e.src].push_back(e.dst);

  for (uint32_t e : a.entries) a.head.emplace(e, e);
  auto claim_from = [&](uint32_t e) {
    std::deque<uint32_t> q{e};
    while (!q.empty()) {
      uint32_t u = q.front();
      q.pop_front();
      auto it = adj.find(u);
      if (it == adj.end()) continue;
      for (uint32_t v : it->second)
        if (a.head.emplace(v, e).second) q.push_back(v);
    }
  };
  for (uint32_t e : a.entries) claim_from(e);
  for (const auto& [s, _] : g.nodes) {
    if (a.head.count(s)) continue;
    a.entries.insert(s);
    a.head.emplace(s, s);
    claim_from(s);
  }
  return a;
}

}  // namespace

StructuredProgram partition_and_promote(const Cfg& c) {
  StructuredProgram sp;
  sp.cfg = c;
  Cfg& g = sp.cfg;
  while (true) {
    std::set<uint32_t> call_targets;
    size_t calls_before = 0;
    for (const Edge& e : g.edges)
      if (e.kind == EdgeKind::Call) {
        call_targets.insert(e.dst);
        calls_before++;
      }
    Assignment a = assign_ids(g, call_targets);

    std::vector<Edge> eligible;
    for (const Edge& e : g.edges)
      if (e.kind == EdgeKind::Flow &&
          (call_targets.count(e.dst) || a.head.at(e.src) != a.head.at(e.dst)))
        eligible.push_back(e);

    if (eligible.empty()) {
      sp.partition.func_entries = a.entries;
      for (const auto& [node, head] : a.head)
        sp.partition.assignment.emplace(node, sp.partition.id_of(head));
      break;
    }
    for (const Edge& e : eligible) {
      g.edges.erase(e);
      Edge call{e.src, e.dst, EdgeKind::Call, e.prov};
      g.edges.insert(call);
      sp.partition.promoted.insert(call);
    }
    size_t calls_after = 0;
    for (const Edge& e : g.edges)
      if (e.kind == EdgeKind::Call) calls_after++;
    if (calls_after <= calls_before)
      throw error(errc::internal, "promotion did not grow the call set");
  }
  sp.partition.tail_calls = sp.partition.promoted;
  return sp;
}

std::set<uint32_t> compute_never_returns(const StructuredProgram& sp) {
  const Cfg& g = sp.cfg;
  const FunctionPartition& part = sp.partition;
  std::vector<uint32_t> entries(part.func_entries.begin(), part.func_entries.end());

  std::set<uint32_t> can_ret;
  auto returns = [&](uint32_t entry) {
    std::set<uint32_t> seen{entry};
    std::deque<uint32_t> q{entry};
    while (!q.empty()) {
      uint32_t u = q.front();
      q.pop_front();
      bool any_flow = false, any_call = false, callee_returns = false;
      std::optional<uint32_t> resume;
      for (auto it = g.edges.lower_bound(Edge{u, 0, EdgeKind::Flow, Provenance::Dynamic});
           it != g.edges.end() && it->src == u; ++it) {
        switch (it->kind) {
          case EdgeKind::Flow:
            any_flow = true;
            if (seen.insert(it->dst).second) q.push_back(it->dst);
            break;
          case EdgeKind::Call: {
            any_call = true;
            bool ret = can_ret.count(part.assignment.at(it->dst)) != 0;
            if (part.tail_calls.count(*it)) {
              if (ret) return true;  // tail call: we return when the callee does
            } else if (ret) {
              callee_returns = true;
            }
            break;
          }
          case EdgeKind::Resume:
            resume = it->dst;
            break;
        }
      }
      if (resume && callee_returns && seen.insert(*resume).second) q.push_back(*resume);
      if (g.nodes.at(u).term == TerminatorKind::Return && !any_flow && !any_call)
        return true;  // a true return (targets were all resume points)
    }
    return false;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (uint32_t e : entries) {
      uint32_t fid = part.assignment.at(e);
      if (can_ret.count(fid)) continue;
      if (returns(e)) {
        can_ret.insert(fid);
        changed = true;
      }
    }
  }
  std::set<uint32_t> nr;
  for (uint32_t i = 0; i < entries.size(); i++)
    if (!can_ret.count(i)) nr.insert(i);
  return nr;
}

StructuredProgram structure(const Cfg& c, const isa::Program& prog) {
  std::vector<UnresolvedCall> unresolved;
  Cfg marked = mark_calls(c, prog, &unresolved);
  StructuredProgram sp = partition_and_promote(marked);
  sp.unresolved = std::move(unresolved);
  sp.never_returns = compute_never_returns(sp);

  std::vector<Edge> dead;
  for (const Edge& e : sp.cfg.edges) {
    if (e.kind != EdgeKind::Resume) continue;
    bool live = false;
    for (const Edge& call : out_edges(sp.cfg, e.src, EdgeKind::Call))
      if (!sp.never_returns.count(sp.partition.assignment.at(call.dst))) live = true;
    if (!live) dead.push_back(e);
  }
  for (const Edge& e : dead) {
    sp.cfg.edges.erase(e);
    sp.dead_resumes.insert(e);
  }
  validate(sp);
  return sp;
}

void validate(const StructuredProgram& sp) {
  const Cfg& g = sp.cfg;
  const FunctionPartition& part = sp.partition;
  for (const auto& [s, _] : g.nodes)
    if (!part.assignment.count(s))
      throw error(errc::verify, "unassigned node " + hex32(s));
  for (uint32_t e : part.func_entries)
    if (part.assignment.at(e) != part.id_of(e))
      throw error(errc::verify, "entry " + hex32(e) + " not heading its own function");

  std::set<uint32_t> call_targets;
  for (const Edge& e : g.edges)
    if (e.kind == EdgeKind::Call) call_targets.insert(e.dst);
  for (const Edge& e : g.edges) {
    if (e.kind == EdgeKind::Flow) {
      if (part.assignment.at(e.src) != part.assignment.at(e.dst))
        throw error(errc::verify, "flow edge crosses functions at " + hex32(e.src));
      if (call_targets.count(e.dst))
        throw error(errc::verify, "flow edge into called block " + hex32(e.dst));
    } else if (e.kind == EdgeKind::Call) {
      if (!part.func_entries.count(e.dst))
        throw error(errc::verify, "call target " + hex32(e.dst) + " is not an entry");
    }
  }

  // Resume edges agree with the never-returns verdicts.
  for (const auto& [s, n] : g.nodes) {
    if (!is_call_site(n.term)) continue;
    std::vector<Edge> calls = out_edges(g, s, EdgeKind::Call);
    if (calls.empty()) continue;  // unresolved site
    bool live = false;
    for (const Edge& call : calls)
      if (!sp.never_returns.count(part.assignment.at(call.dst))) live = true;
    bool has_resume = !out_edges(g, s, EdgeKind::Resume).empty();
    if (has_resume && !live)
      throw error(errc::verify, "resume after never-returning call at " + hex32(s));
    if (!has_resume && live && g.nodes.count(n.end + 4) &&
        !sp.dead_resumes.count({s, n.end + 4, EdgeKind::Resume, n.prov}))
      throw error(errc::verify, "missing resume after returning call at " + hex32(s));
  }

  // Every node is reachable from its function's entry (allowing removed
  // resume edges, which orphan blocks after never-returning calls).
  std::map<uint32_t, std::vector<uint32_t>> adj;
  for (const Edge& e : g.edges)
    if (e.kind == EdgeKind::Flow || e.kind == EdgeKind::Resume)
      adj[e.src].push_back(e.dst);
  for (const Edge& e : sp.dead_resumes) adj[e.src].push_back(e.dst);
  for (uint32_t entry : part.func_entries) {
    uint32_t fid = part.id_of(entry);
    std::set<uint32_t> seen{entry};
    std::deque<uint32_t> q{entry};
    while (!q.empty()) {
      uint32_t u = q.front();
      q.pop_front();
      auto it = adj.find(u);
      if (it == adj.end()) continue;
      for (uint32_t v : it->second)
        if (part.assignment.at(v) == fid && seen.insert(v).second) q.push_back(v);
    }
    for (const auto& [s, id] : part.assignment)
      if (id == fid && !seen.count(s))
        throw error(errc::verify, "node " + hex32(s) + " unreachable in its function");
  }
}

std::string to_json(const StructuredProgram& sp) {
  json j;
  j["kind"] = "structured";
  j["version"] = 1;
  j["text_sha256"] = sp.cfg.text_sha256;
  j["entry"] = hex32(sp.cfg.entry);
  j["functions"] = json::array();
  for (uint32_t entry : sp.partition.func_entries) {
    uint32_t fid = sp.partition.id_of(entry);
    json members = json::array();
    for (const auto& [s, id] : sp.partition.assignment)
      if (id == fid) members.push_back(hex32(s));
    j["functions"].push_back({{"id", fid},
                              {"entry", hex32(entry)},
                              {"members", members},
                              {"never_returns", sp.never_returns.count(fid) != 0}});
  }
  auto edge_list = [](const std::set<Edge>& edges) {
    json arr = json::array();
    for (const Edge& e : edges)
      arr.push_back({{"src", hex32(e.src)},
                     {"dst", hex32(e.dst)},
                     {"prov", cfg::provenance_name(e.prov)}});
    return arr;
  };
  j["promoted"] = edge_list(sp.partition.promoted);
  j["dead_resumes"] = edge_list(sp.dead_resumes);
  j["unresolved"] = json::array();
  for (const UnresolvedCall& u : sp.unresolved)
    j["unresolved"].push_back({{"site", hex32(u.site)}, {"target", hex32(u.target)}});
  j["cfg"] = json::parse(cfg::to_json(sp.cfg));
  return j.dump(2) + "\n";
}

StructuredProgram from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw error(errc::parse, std::string("bad structured JSON: ") + e.what());
  }
  try {
    if (j.value("kind", "") != "structured")
      throw error(errc::format, "not a structured-program file");
    if (j.value("version", 0) != 1)
      throw error(errc::format, "unsupported structured-program version");
    StructuredProgram sp;
    sp.cfg = cfg::from_json(j.at("cfg").dump());
    if (j.at("text_sha256").get<std::string>() != sp.cfg.text_sha256 ||
        parse_addr(j.at("entry")) != sp.cfg.entry)
      throw error(errc::format, "header disagrees with embedded cfg");
    for (const json& jf : j.at("functions"))
      sp.partition.func_entries.insert(parse_addr(jf.at("entry")));
    for (const json& jf : j.at("functions")) {
      uint32_t fid = sp.partition.id_of(parse_addr(jf.at("entry")));
      if (jf.at("id").get<uint32_t>() != fid)
        throw error(errc::format, "function ids are not ordinal");
      for (const json& jm : jf.at("members"))
        sp.partition.assignment[parse_addr(jm)] = fid;
      if (jf.at("never_returns").get<bool>()) sp.never_returns.insert(fid);
    }
    auto edge_set = [&](const json& arr, EdgeKind kind) {
      std::set<Edge> out;
      for (const json& je : arr) {
        std::string p = je.at("prov").get<std::string>();
        if (p != "dynamic" && p != "static")
          throw error(errc::format, "bad provenance");
        out.insert(Edge{parse_addr(je.at("src")), parse_addr(je.at("dst")),
                        kind,
                        p == "dynamic" ? Provenance::Dynamic
                                       : Provenance::Static});
      }
      return out;
    };
    sp.partition.promoted = edge_set(j.at("promoted"), EdgeKind::Call);
    sp.partition.tail_calls = sp.partition.promoted;
    sp.dead_resumes = edge_set(j.at("dead_resumes"), EdgeKind::Resume);
    for (const json& ju : j.at("unresolved"))
      sp.unresolved.push_back(
          UnresolvedCall{parse_addr(ju.at("site")), parse_addr(ju.at("target"))});
    return sp;
  } catch (const json::exception& e) {
    throw error(errc::format, std::string("bad structured file: ") + e.what());
  }
}

void save_file(const StructuredProgram& sp, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open for writing: " + path);
  std::string s = to_json(sp);
  f.write(s.data(), (std::streamsize)s.size());
  if (!f) throw error(errc::io, "write failed: " + path);
}

StructuredProgram load_file(
    const std::string& path,
    const std::optional<std::string>& expected_text_sha256) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error(errc::io, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  StructuredProgram sp = from_json(ss.str());
  if (expected_text_sha256 && sp.cfg.text_sha256 != *expected_text_sha256)
    throw error(errc::verify, "structured program " + path +
                                  " belongs to a different binary");
  return sp;
}

}  // namespace winnow::structure
