#include "rewrite.hpp"

#include <algorithm>
#include <optional>
#include <vector>

#include "common.hpp"

namespace winnow::rewrite {

namespace {

using cfg::Edge;
using cfg::EdgeKind;
using emit::GuardMode;
using isa::Cond;
using isa::Instruction;
using isa::Opcode;
using isa::TerminatorKind;

constexpr uint8_t kScratch = 12;  // reserved transfer scratch per the ABI

Instruction movi(uint8_t rd, int32_t imm) {
  return {Opcode::MOVI, rd, 0, 0, Cond::EQ, imm};
}
Instruction cmp(uint8_t a, uint8_t b) { return {Opcode::CMP, 0, a, b, Cond::EQ, 0}; }
Instruction svc(int32_t n) { return {Opcode::SVC, 0, 0, 0, Cond::EQ, n}; }
Instruction ret() { return {Opcode::RET, 0, 0, 0, Cond::EQ, 0}; }

Cond invert(Cond c) {
  switch (c) {
    case Cond::EQ: return Cond::NE;
    case Cond::NE: return Cond::EQ;
    case Cond::LT: return Cond::GE;
    case Cond::GE: return Cond::LT;
    case Cond::GT: return Cond::LE;
    case Cond::LE: return Cond::GT;
  }
  throw error(errc::internal, "bad condition code");
}

struct OutEdges {
  std::vector<uint32_t> flows, calls;  // ascending
};

class Rewriter {
 public:
  Rewriter(const structure::StructuredProgram& sp, const isa::Program& prog,
           GuardMode mode)
      : sp_(sp), prog_(prog), mode_(mode) {}

  isa::Program run() {
    if (!sp_.cfg.nodes.count(sp_.cfg.entry))
      throw error(errc::verify, "no kept block at the program entry");
    for (uint32_t e : sp_.cfg.thread_entries)
      if (sp_.cfg.nodes.count(e)) spawn_entries_.push_back(e);

    uint32_t addr = prog_.text_base;
    for (const auto& [s, n] : sp_.cfg.nodes) {
      new_addr_[s] = addr;
      addr += 4u * node_words(n);
    }

    out_.entry = new_addr_.at(sp_.cfg.entry);
    out_.text_base = prog_.text_base;
    out_.data_base = prog_.data_base;
    out_.data = prog_.data;
    for (const auto& [s, n] : sp_.cfg.nodes) {
      if (here() != new_addr_.at(s))
        throw error(errc::internal, "layout drift at block " + hex32(s));
      emit_node(n);
    }
    isa::validate(out_);
    return std::move(out_);
  }

 private:
  // --- shared shape computations (sizing and emission must agree) ---------

  OutEdges edges_of(uint32_t src) const {
    OutEdges out;
    auto it = sp_.cfg.edges.lower_bound(
        Edge{src, 0, EdgeKind::Flow, cfg::Provenance::Dynamic});
    for (; it != sp_.cfg.edges.end() && it->src == src; ++it) {
      if (it->kind == EdgeKind::Flow) out.flows.push_back(it->dst);
      else if (it->kind == EdgeKind::Call) out.calls.push_back(it->dst);
    }
    return out;
  }

  // Keeps only targets with a kept block.  A recorded target that was not
  // materialized is a build error in fail-safe mode and silently
  // unreachable in transparent mode.
  std::vector<uint32_t> valid_targets(const std::set<uint32_t>& want,
                                      const char* what) const {
    std::vector<uint32_t> out;
    for (uint32_t t : want) {
      if (sp_.cfg.nodes.count(t)) out.push_back(t);
      else if (mode_ == GuardMode::FailSafe)
        throw error(errc::verify, std::string(what) + " target " + hex32(t) +
                                      " has no kept block");
    }
    return out;
  }

  std::vector<uint32_t> ret_targets(const cfg::Node& n) const {
    std::set<uint32_t> want;
    OutEdges e = edges_of(n.start);
    want.insert(e.flows.begin(), e.flows.end());
    want.insert(e.calls.begin(), e.calls.end());
    if (auto it = sp_.cfg.indirect.find(n.end); it != sp_.cfg.indirect.end())
      want.insert(it->second.begin(), it->second.end());
    if (auto it = sp_.cfg.ret_pairs.find(n.start); it != sp_.cfg.ret_pairs.end())
      want.insert(it->second.begin(), it->second.end());
    return valid_targets(want, "return");
  }

  std::vector<uint32_t> br_targets(const cfg::Node& n) const {
    OutEdges e = edges_of(n.start);
    std::set<uint32_t> want(e.flows.begin(), e.flows.end());
    want.insert(e.calls.begin(), e.calls.end());
    return valid_targets(want, "indirect jump");
  }

  std::vector<uint32_t> blr_targets(const cfg::Node& n) const {
    OutEdges e = edges_of(n.start);
    return valid_targets({e.calls.begin(), e.calls.end()}, "indirect call");
  }

  bool body_includes_terminator(const cfg::Node& n) const {
    return n.term == TerminatorKind::Fallthrough ||
           n.term == TerminatorKind::SyscallExit;
  }

  uint32_t spawn_chain_words() const {
    return 5u * (uint32_t)spawn_entries_.size() + 2u;
  }

  bool is_spawn(uint32_t word) const {
    auto d = isa::decode(word);
    return d && d->op == Opcode::SVC && d->imm == 4;
  }

  Instruction terminator_ins(const cfg::Node& n) const {
    auto d = isa::decode(prog_.word_at(n.end));
    if (!d) throw error(errc::verify, "undecodable terminator at " + hex32(n.end));
    return *d;
  }

  uint32_t node_words(const cfg::Node& n) {
    uint32_t words = 0;
    uint32_t body_end = body_includes_terminator(n) ? n.end + 4 : n.end;
    for (uint32_t a = n.start; a < body_end; a += 4) {
      words += 1;
      if (is_spawn(prog_.word_at(a))) words += spawn_chain_words();
    }
    OutEdges e = edges_of(n.start);
    bool fail_safe = mode_ == GuardMode::FailSafe;
    switch (n.term) {
      case TerminatorKind::Fallthrough:
        words += e.flows.empty() ? 2 : 1;
        break;
      case TerminatorKind::DirectJump:
        words += e.flows.empty() && e.calls.empty() ? 2 : 1;
        break;
      case TerminatorKind::DirectCondJump: {
        auto [has_taken, has_fall] = cond_sides(n, e);
        if (has_taken && has_fall) words += 2;
        else if (has_taken || has_fall) words += fail_safe ? 3 : 1;
        else words += 2;
        break;
      }
      case TerminatorKind::DirectCall:
        words += 2;  // call realization and unresolved stub are both two words
        break;
      case TerminatorKind::IndirectCall: {
        uint32_t k = (uint32_t)blr_targets(n).size();
        words += k == 0 ? 2 : (fail_safe ? 5 * k + 2 : 5 * (k - 1) + 2);
        break;
      }
      case TerminatorKind::IndirectJump: {
        uint32_t k = (uint32_t)br_targets(n).size();
        words += k == 0 ? 2 : (fail_safe ? 4 * k + 2 : 4 * (k - 1) + 1);
        break;
      }
      case TerminatorKind::Return:
        words += 4 * (uint32_t)ret_targets(n).size() + 1;
        break;
      case TerminatorKind::SyscallExit:
        break;  // the SVC 0 word is part of the body
    }
    return words;
  }

  std::pair<bool, bool> cond_sides(const cfg::Node& n, const OutEdges& e) const {
    uint32_t taken = isa::branch_target(n.end, terminator_ins(n));
    uint32_t fall = n.end + 4;
    auto has = [&](uint32_t t) {
      return std::count(e.flows.begin(), e.flows.end(), t) ||
             std::count(e.calls.begin(), e.calls.end(), t);
    };
    return {has(taken), has(fall)};
  }

  // --- emission ------------------------------------------------------------

  uint32_t here() const { return out_.text_base + 4u * (uint32_t)out_.text.size(); }

  void put(const Instruction& ins) { out_.text.push_back(isa::encode(ins)); }

  void put_movi_addr(uint8_t rd, uint32_t value) {
    if (value > 0x7fff)
      throw error(errc::format,
                  "address " + hex32(value) + " does not fit a MOVI immediate");
    put(movi(rd, (int32_t)value));
  }

  void put_b(uint32_t target) {
    put({Opcode::B, 0, 0, 0, Cond::EQ,
         (int32_t)(((int64_t)target - (int64_t)here()) / 4)});
  }

  void put_bcond(Cond c, uint32_t target) {
    put({Opcode::BCOND, 0, 0, 0, c,
         (int32_t)(((int64_t)target - (int64_t)here()) / 4)});
  }

  void put_stub(uint32_t code) {
    put(movi(0, (int32_t)code));
    put(svc(0));
  }

  // Translates the spawn-entry register from old to new address; unmatched
  // entries exit 98 like the emitted runtime's spawn fault.
  void emit_spawn_chain() {
    uint32_t base = here();
    uint32_t svc_slot = base + 4u * (spawn_chain_words());
    for (uint32_t e : spawn_entries_) {
      put_movi_addr(kScratch, e);
      put(cmp(0, kScratch));
      put({Opcode::BCOND, 0, 0, 0, Cond::NE, 3});  // next arm / default
      put_movi_addr(0, new_addr_.at(e));
      put_b(svc_slot);
    }
    put_stub(98);
  }

  void emit_node(const cfg::Node& n) {
    uint32_t body_end = body_includes_terminator(n) ? n.end + 4 : n.end;
    for (uint32_t a = n.start; a < body_end; a += 4) {
      uint32_t w = prog_.word_at(a);
      if (is_spawn(w)) emit_spawn_chain();
      out_.text.push_back(w);
    }
    OutEdges e = edges_of(n.start);
    bool fail_safe = mode_ == GuardMode::FailSafe;
    switch (n.term) {
      case TerminatorKind::Fallthrough:
        if (e.flows.empty()) put_stub(99);
        else put_b(new_addr_.at(e.flows.front()));
        break;
      case TerminatorKind::DirectJump: {
        if (e.flows.empty() && e.calls.empty()) put_stub(99);
        else put_b(new_addr_.at(e.flows.empty() ? e.calls.front() : e.flows.front()));
        break;
      }
      case TerminatorKind::DirectCondJump: {
        Instruction ins = terminator_ins(n);
        uint32_t taken = isa::branch_target(n.end, ins);
        uint32_t fall = n.end + 4;
        auto [has_taken, has_fall] = cond_sides(n, e);
        if (has_taken && has_fall) {
          put_bcond(ins.cond, new_addr_.at(taken));
          put_b(new_addr_.at(fall));
        } else if (has_taken) {
          if (fail_safe) {
            put_bcond(ins.cond, new_addr_.at(taken));
            put_stub(99);
          } else {
            put_b(new_addr_.at(taken));
          }
        } else if (has_fall) {
          if (fail_safe) {
            put_bcond(invert(ins.cond), new_addr_.at(fall));
            put_stub(99);
          } else {
            put_b(new_addr_.at(fall));
          }
        } else {
          put_stub(99);
        }
        break;
      }
      case TerminatorKind::DirectCall: {
        if (e.calls.empty()) {
          put_stub(99);  // unresolved call site
        } else {
          put_movi_addr(isa::kLR, n.end + 4);  // resume keeps its old address
          put_b(new_addr_.at(e.calls.front()));
        }
        break;
      }
      case TerminatorKind::IndirectCall: {
        std::vector<uint32_t> targets = blr_targets(n);
        uint8_t sel = selector(n);
        if (targets.empty()) {
          put_stub(99);
          break;
        }
        for (size_t i = 0; i < targets.size(); i++) {
          bool last_folded = !fail_safe && i + 1 == targets.size();
          if (!last_folded) {
            put_movi_addr(kScratch, targets[i]);
            put(cmp(sel, kScratch));
            put({Opcode::BCOND, 0, 0, 0, Cond::NE, 3});
          }
          put_movi_addr(isa::kLR, n.end + 4);
          put_b(new_addr_.at(targets[i]));
        }
        if (fail_safe) put_stub(99);
        break;
      }
      case TerminatorKind::IndirectJump: {
        std::vector<uint32_t> targets = br_targets(n);
        uint8_t sel = selector(n);
        if (targets.empty()) {
          put_stub(99);
          break;
        }
        for (size_t i = 0; i < targets.size(); i++) {
          bool last_folded = !fail_safe && i + 1 == targets.size();
          if (!last_folded) {
            put_movi_addr(kScratch, targets[i]);
            put(cmp(sel, kScratch));
            put({Opcode::BCOND, 0, 0, 0, Cond::NE, 2});
          }
          put_b(new_addr_.at(targets[i]));
        }
        if (fail_safe) put_stub(99);
        break;
      }
      case TerminatorKind::Return: {
        for (uint32_t t : ret_targets(n)) {
          put_movi_addr(kScratch, t);
          put(cmp(isa::kLR, kScratch));
          put({Opcode::BCOND, 0, 0, 0, Cond::NE, 2});
          put_b(new_addr_.at(t));
        }
        put(ret());  // thread-exit sentinel and anything unrecorded
        break;
      }
      case TerminatorKind::SyscallExit:
        break;
    }
  }

  uint8_t selector(const cfg::Node& n) const {
    uint8_t sel = terminator_ins(n).rs1;
    if (sel == kScratch)
      throw error(errc::format, "indirect transfer at " + hex32(n.end) +
                                    " selects through the reserved scratch register");
    return sel;
  }

  const structure::StructuredProgram& sp_;
  const isa::Program& prog_;
  GuardMode mode_;
  std::vector<uint32_t> spawn_entries_;  // kept, ascending
  std::map<uint32_t, uint32_t> new_addr_;
  isa::Program out_;
};

}  // namespace

isa::Program rewrite_binary(const structure::StructuredProgram& sp,
                            const isa::Program& prog, emit::GuardMode mode) {
  return Rewriter(sp, prog, mode).run();
}

}  // namespace winnow::rewrite
