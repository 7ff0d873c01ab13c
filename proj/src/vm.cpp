#include "vm.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>

#include "common.hpp"

namespace winnow::vm {

const char* fault_name(Fault f) {
  switch (f) {
    case Fault::none: return "none";
    case Fault::undecodable: return "undecodable";
    case Fault::mem_unaligned: return "mem_unaligned";
    case Fault::mem_oob: return "mem_oob";
    case Fault::stack_band: return "stack_band";
    case Fault::bad_jump: return "bad_jump";
    case Fault::invalid_syscall: return "invalid_syscall";
    case Fault::step_limit: return "step_limit";
    case Fault::deadlock: return "deadlock";
  }
  return "?";
}

namespace {

struct Flags {
  bool n = false, z = false, c = false, v = false;
};

bool cond_holds(isa::Cond c, const Flags& f) {
  switch (c) {
    case isa::Cond::EQ: return f.z;
    case isa::Cond::NE: return !f.z;
    case isa::Cond::LT: return f.n != f.v;
    case isa::Cond::GE: return f.n == f.v;
    case isa::Cond::GT: return !f.z && f.n == f.v;
    case isa::Cond::LE: return f.z || f.n != f.v;
  }
  return false;
}

// Thrown by the executor, converted into a fault result by run().
struct FaultExc {
  Fault fault;
  uint32_t addr;
  std::string detail;
};

struct CachedBlock {
  uint32_t end = 0;
  isa::TerminatorKind term = isa::TerminatorKind::Fallthrough;
  std::set<uint32_t> succs;
};

// Per-thread block recorder.  Blocks are discovered as executed: a block
// opens at the target of a control transfer (or at a cached block head the
// thread straight-lines into) and closes at the next terminator.  When a
// transfer lands strictly inside a cached block, the cached block is split
// so recorded boundaries stay consistent.
class BlockRecorder {
 public:
  // Hook for every executed instruction, before its effects.
  void before_exec(uint32_t pc) {
    if (in_block_) {
      if (pc != start_ && cache_.count(pc)) {
        close(pc - 4, isa::TerminatorKind::Fallthrough, pc);
        in_block_ = true;
        start_ = pc;
      }
      return;
    }
    split_at(pc);
    in_block_ = true;
    start_ = pc;
  }

  // The instruction at `end` terminated the current block; `succ` is the
  // block start control moves to next, if any.
  void close(uint32_t end, isa::TerminatorKind term, std::optional<uint32_t> succ) {
    auto [it, inserted] = cache_.try_emplace(start_, CachedBlock{end, term, {}});
    if (!inserted && (it->second.end != end || it->second.term != term))
      throw error(errc::internal, "trace cache disagrees at " + hex32(start_));
    if (succ) it->second.succs.insert(*succ);
    in_block_ = false;
  }

  void indirect(uint32_t site, uint32_t target) { indirect_[site].insert(target); }

  bool empty() const { return cache_.empty(); }

  trace::TraceSet to_trace(const std::string& digest) const {
    trace::TraceSet t;
    t.text_sha256 = digest;
    for (const auto& [s, b] : cache_)
      t.blocks.emplace(s, trace::BlockRecord{s, b.end, b.term, b.succs});
    t.indirect = indirect_;
    return t;
  }

 private:
  void split_at(uint32_t m) {
    auto it = cache_.upper_bound(m);
    if (it == cache_.begin()) return;
    --it;
    if (it->first == m || it->second.end < m) return;
    CachedBlock lower{it->second.end, it->second.term, std::move(it->second.succs)};
    it->second.end = m - 4;
    it->second.term = isa::TerminatorKind::Fallthrough;
    it->second.succs = {m};
    cache_.emplace(m, std::move(lower));
  }

  std::map<uint32_t, CachedBlock> cache_;
  std::map<uint32_t, std::set<uint32_t>> indirect_;
  bool in_block_ = false;
  uint32_t start_ = 0;
};

struct Thread {
  std::array<uint32_t, isa::kNumRegs> regs{};
  Flags flags;
  uint32_t pc = 0;
  bool live = false;
  int waiting_on = -1;  // tid this thread joined; -1 when runnable
  uint32_t band_top = 0;
  BlockRecorder rec;
};

class Machine {
 public:
  Machine(const isa::Program& prog, const RunOptions& opts) : prog_(prog), opts_(opts) {
    if (opts_.quantum == 0) throw error(errc::verify, "schedule quantum must be >= 1");
    if ((opts_.mem_size & 3) || opts_.mem_size < kStackBand)
      throw error(errc::verify, "memory size must be word-aligned and hold a stack band");
    if ((uint64_t)prog_.text_base + prog_.text_size() > opts_.mem_size ||
        (uint64_t)prog_.data_base + prog_.data.size() > opts_.mem_size)
      throw error(errc::verify, "image does not fit in guest memory");
    mem_.assign(opts_.mem_size, 0);
    for (size_t i = 0; i < prog_.text.size(); i++)
      st32(prog_.text_base + 4 * (uint32_t)i, prog_.text[i]);
    std::copy(prog_.data.begin(), prog_.data.end(), mem_.begin() + prog_.data_base);

    Thread& main = threads_[0];
    main.live = true;
    main.pc = prog_.entry;
    main.band_top = opts_.mem_size;
    main.regs[isa::kSP] = opts_.mem_size;
    main.regs[isa::kLR] = kExitSentinel;
    nthreads_ = 1;
  }

  RunResult go() {
    RunResult res;
    try {
      loop(res);
    } catch (const FaultExc& f) {
      res.fault = f.fault;
      res.fault_addr = f.addr;
      res.fault_detail = f.detail;
      res.trace.reset();
    }
    return res;
  }

 private:
  void loop(RunResult& res) {
    using enum isa::Opcode;
    int cur = 0;
    uint32_t slice = 0;
    while (true) {
      Thread& t = threads_[cur];
      if (res.steps >= opts_.step_limit)
        throw FaultExc{Fault::step_limit, t.pc,
                       "step limit of " + std::to_string(opts_.step_limit) + " exhausted"};
      if (!prog_.contains_text(t.pc))
        throw FaultExc{Fault::bad_jump, t.pc, "control reached " + hex32(t.pc)};
      uint32_t word = ld32(t.pc);
      auto decoded = isa::decode(word);
      if (!decoded)
        throw FaultExc{Fault::undecodable, t.pc,
                       "word " + hex32(word) + " at " + hex32(t.pc) + " does not decode"};
      const isa::Instruction ins = *decoded;
      if (opts_.collect_trace) t.rec.before_exec(t.pc);
      res.steps++;
      slice++;

      const uint32_t pc = t.pc;
      auto& r = t.regs;
      bool reschedule = false;
      switch (ins.op) {
        case MOVI: r[ins.rd] = (uint32_t)ins.imm; t.pc += 4; break;
        case MOV: r[ins.rd] = r[ins.rs1]; t.pc += 4; break;
        case ADD: r[ins.rd] = r[ins.rs1] + r[ins.rs2]; t.pc += 4; break;
        case SUB: r[ins.rd] = r[ins.rs1] - r[ins.rs2]; t.pc += 4; break;
        case MUL: r[ins.rd] = r[ins.rs1] * r[ins.rs2]; t.pc += 4; break;
        case AND: r[ins.rd] = r[ins.rs1] & r[ins.rs2]; t.pc += 4; break;
        case ORR: r[ins.rd] = r[ins.rs1] | r[ins.rs2]; t.pc += 4; break;
        case XOR: r[ins.rd] = r[ins.rs1] ^ r[ins.rs2]; t.pc += 4; break;
        case SHL: r[ins.rd] = r[ins.rs1] << (r[ins.rs2] & 31); t.pc += 4; break;
        case SHR: r[ins.rd] = r[ins.rs1] >> (r[ins.rs2] & 31); t.pc += 4; break;
        case ADDI: r[ins.rd] = r[ins.rs1] + (uint32_t)ins.imm; t.pc += 4; break;
        case CMP: {
          uint32_t a = r[ins.rs1], b = r[ins.rs2], d = a - b;
          t.flags.n = (d >> 31) != 0;
          t.flags.z = d == 0;
          t.flags.c = a >= b;
          t.flags.v = (((a ^ b) & (a ^ d)) >> 31) != 0;
          t.pc += 4;
          break;
        }
        case LDR: {
          uint32_t addr = r[ins.rs1] + (uint32_t)ins.imm;
          check_access(t, ins.rs1, addr, /*store=*/false);
          r[ins.rd] = ld32(addr);
          t.pc += 4;
          break;
        }
        case STR: {
          uint32_t addr = r[ins.rs1] + (uint32_t)ins.imm;
          check_access(t, ins.rs1, addr, /*store=*/true);
          st32(addr, r[ins.rd]);
          t.pc += 4;
          break;
        }
        case B: {
          uint32_t tgt = isa::branch_target(pc, ins);
          trace_close(t, pc, isa::TerminatorKind::DirectJump, tgt);
          t.pc = tgt;
          break;
        }
        case BCOND: {
          uint32_t tgt = cond_holds(ins.cond, t.flags) ? isa::branch_target(pc, ins) : pc + 4;
          trace_close(t, pc, isa::TerminatorKind::DirectCondJump, tgt);
          t.pc = tgt;
          break;
        }
        case BL: {
          uint32_t tgt = isa::branch_target(pc, ins);
          r[isa::kLR] = pc + 4;
          trace_close(t, pc, isa::TerminatorKind::DirectCall, tgt);
          t.pc = tgt;
          break;
        }
        case BR:
        case BLR:
        case RET: {
          uint32_t tgt = ins.op == RET ? r[isa::kLR] : r[ins.rs1];
          isa::TerminatorKind kind = ins.op == BR    ? isa::TerminatorKind::IndirectJump
                                     : ins.op == BLR ? isa::TerminatorKind::IndirectCall
                                                     : isa::TerminatorKind::Return;
          if (ins.op == BLR) r[isa::kLR] = pc + 4;
          if (tgt == kExitSentinel) {
            if (ins.op != RET)
              throw FaultExc{Fault::bad_jump, tgt, "only RET may target the exit sentinel"};
            trace_close(t, pc, kind, std::nullopt);
            if (cur == 0) {
              finish(res, (int32_t)r[0]);
              return;
            }
            thread_exit(cur);
            reschedule = true;
          } else {
            if ((tgt & 3) || !prog_.contains_text(tgt))
              throw FaultExc{Fault::bad_jump, tgt, "indirect transfer to " + hex32(tgt)};
            if (opts_.collect_trace) t.rec.indirect(pc, tgt);
            trace_close(t, pc, kind, tgt);
            t.pc = tgt;
          }
          break;
        }
        case SVC:
          switch (ins.imm) {
            case 0:
              trace_close(t, pc, isa::TerminatorKind::SyscallExit, std::nullopt);
              finish(res, (int32_t)r[0]);
              return;
            case 1:
              res.out += std::to_string((int32_t)r[0]);
              res.out += '\n';
              t.pc += 4;
              break;
            case 2:
              res.out += (char)(r[0] & 0xFF);
              t.pc += 4;
              break;
            case 3:
              r[0] = read_int();
              t.pc += 4;
              break;
            case 4:
              spawn(t, pc);
              t.pc += 4;
              reschedule = true;
              break;
            case 5:
              t.pc += 4;  // resume after the join once woken
              join(cur, t);
              reschedule = true;
              break;
            default:
              throw FaultExc{Fault::invalid_syscall, pc,
                             "unknown syscall " + std::to_string(ins.imm)};
          }
          break;
      }

      if (reschedule || slice >= opts_.quantum) {
        slice = 0;
        if (!schedule(cur))
          throw FaultExc{Fault::deadlock, threads_[cur].pc, "all live threads blocked in join"};
      }
    }
  }

  void finish(RunResult& res, int32_t code) {
    res.exit_code = code;
    if (opts_.collect_trace) res.trace = finalize_trace();
  }

  // --- memory ---------------------------------------------------------

  uint32_t ld32(uint32_t a) const {
    return (uint32_t)mem_[a] | (uint32_t)mem_[a + 1] << 8 | (uint32_t)mem_[a + 2] << 16 |
           (uint32_t)mem_[a + 3] << 24;
  }
  void st32(uint32_t a, uint32_t v) {
    mem_[a] = (uint8_t)v;
    mem_[a + 1] = (uint8_t)(v >> 8);
    mem_[a + 2] = (uint8_t)(v >> 16);
    mem_[a + 3] = (uint8_t)(v >> 24);
  }

  void check_access(const Thread& t, uint8_t base_reg, uint32_t addr, bool store) const {
    if (addr & 3)
      throw FaultExc{Fault::mem_unaligned, addr, "unaligned access at " + hex32(addr)};
    if (addr > opts_.mem_size - 4)
      throw FaultExc{Fault::mem_oob, addr, "access outside memory at " + hex32(addr)};
    if (base_reg == isa::kSP && (addr < t.band_top - kStackBand || addr >= t.band_top))
      throw FaultExc{Fault::stack_band,
                     addr, "sp access at " + hex32(addr) + " outside stack band ending at " +
                               hex32(t.band_top)};
    if (store && addr >= prog_.text_base && addr < prog_.text_end())
      throw FaultExc{Fault::mem_oob, addr, "store into text at " + hex32(addr)};
  }

  // --- syscalls -------------------------------------------------------

  uint32_t read_int() {
    const std::string& in = opts_.input;
    while (in_pos_ < in.size() && std::isspace((unsigned char)in[in_pos_])) in_pos_++;
    size_t p = in_pos_;
    bool neg = false;
    if (p < in.size() && (in[p] == '-' || in[p] == '+')) {
      neg = in[p] == '-';
      p++;
    }
    uint32_t acc = 0;
    bool any = false;
    while (p < in.size() && std::isdigit((unsigned char)in[p])) {
      acc = acc * 10 + (uint32_t)(in[p] - '0');  // wraps mod 2^32
      any = true;
      p++;
    }
    if (!any) return 0;  // no number available: reads as 0
    in_pos_ = p;
    return neg ? 0u - acc : acc;
  }

  void spawn(Thread& t, uint32_t pc) {
    uint32_t entry = t.regs[0], arg = t.regs[1];
    if (nthreads_ >= kMaxThreads)
      throw FaultExc{Fault::invalid_syscall, pc, "spawn: thread limit reached"};
    if (!prog_.contains_text(entry))
      throw FaultExc{Fault::invalid_syscall, pc, "spawn: entry " + hex32(entry) + " outside text"};
    uint32_t band_top = opts_.mem_size - (uint32_t)nthreads_ * kStackBand;
    if (band_top < kStackBand)
      throw FaultExc{Fault::invalid_syscall, pc, "spawn: no room for a stack band"};
    int tid = nthreads_++;
    Thread& w = threads_[tid];
    w.live = true;
    w.pc = entry;
    w.band_top = band_top;
    w.regs.fill(0);
    w.regs[0] = arg;
    w.regs[isa::kLR] = kExitSentinel;
    w.regs[isa::kSP] = band_top;
    t.regs[0] = (uint32_t)tid;
    thread_entries_.insert(entry);
  }

  void join(int cur, Thread& t) {
    uint32_t tid = t.regs[0];
    if (tid >= (uint32_t)nthreads_ || (int)tid == cur)
      throw FaultExc{Fault::invalid_syscall, t.pc - 4,
                     "join: bad thread id " + std::to_string(tid)};
    if (threads_[tid].live)
      t.waiting_on = (int)tid;
    else
      t.regs[0] = 0;
  }

  // --- scheduling -----------------------------------------------------

  void thread_exit(int tid) {
    threads_[tid].live = false;
    for (int i = 0; i < nthreads_; i++)
      if (threads_[i].waiting_on == tid) {
        threads_[i].waiting_on = -1;
        threads_[i].regs[0] = 0;
      }
  }

  // Advances `cur` to the next runnable thread in cyclic tid order (which
  // may be `cur` itself).  False when every live thread is blocked.
  bool schedule(int& cur) {
    for (int i = 1; i <= nthreads_; i++) {
      int cand = (cur + i) % nthreads_;
      if (threads_[cand].live && threads_[cand].waiting_on < 0) {
        cur = cand;
        return true;
      }
    }
    return false;
  }

  // --- tracing --------------------------------------------------------

  void trace_close(Thread& t, uint32_t end, isa::TerminatorKind k, std::optional<uint32_t> succ) {
    if (opts_.collect_trace) t.rec.close(end, k, succ);
  }

  trace::TraceSet finalize_trace() {
    std::string digest = prog_.text_sha256();
    std::vector<trace::TraceSet> parts;
    for (int i = 0; i < nthreads_; i++)
      if (!threads_[i].rec.empty()) parts.push_back(threads_[i].rec.to_trace(digest));
    if (parts.empty()) {
      trace::TraceSet empty;
      empty.text_sha256 = digest;
      parts.push_back(std::move(empty));
    }
    trace::TraceSet m = trace::merge_unchecked(parts);
    m.thread_entries = thread_entries_;

    // Blocks still in flight when the program exited were never recorded;
    // drop edges into them, then blocks those edges made meaningless.
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto it = m.blocks.begin(); it != m.blocks.end();) {
        trace::BlockRecord& b = it->second;
        for (auto s = b.succs.begin(); s != b.succs.end();)
          s = m.blocks.count(*s) ? std::next(s) : b.succs.erase(s);
        if (b.succs.empty() && b.term != isa::TerminatorKind::SyscallExit &&
            b.term != isa::TerminatorKind::Return) {
          it = m.blocks.erase(it);
          changed = true;
        } else {
          ++it;
        }
      }
    }
    for (auto it = m.indirect.begin(); it != m.indirect.end();) {
      std::set<uint32_t>& tgts = it->second;
      for (auto s = tgts.begin(); s != tgts.end();)
        s = m.blocks.count(*s) ? std::next(s) : tgts.erase(s);
      it = tgts.empty() ? m.indirect.erase(it) : std::next(it);
    }
    for (auto it = m.thread_entries.begin(); it != m.thread_entries.end();)
      it = m.blocks.count(*it) ? std::next(it) : m.thread_entries.erase(it);

    m.runs = {{sha256_hex(opts_.input), opts_.quantum}};
    trace::validate(m);
    return m;
  }

  const isa::Program& prog_;
  const RunOptions& opts_;
  std::vector<uint8_t> mem_;
  std::array<Thread, kMaxThreads> threads_;
  int nthreads_ = 0;
  std::set<uint32_t> thread_entries_;
  size_t in_pos_ = 0;
};

}  // namespace

RunResult run(const isa::Program& prog, const RunOptions& opts) {
  return Machine(prog, opts).go();
}

}  // namespace winnow::vm
