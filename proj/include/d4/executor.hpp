// Copyright 2026 The d4 Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Execution RNN. A plan groups program instructions into transitions; one
// step mixes the successors of every transition by the counter weights:
//
//   S' = Σ_i c_i · w_i(S)
//
// Straight-line runs can be collapsed into one transition by symbolic
// execution, and simple IF..ELSE..THEN regions can be evaluated on both
// sides at once and blended by the condition.

#ifndef D4_EXECUTOR_HPP_
#define D4_EXECUTOR_HPP_

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "d4/autodiff.hpp"
#include "d4/forth.hpp"
#include "d4/machine.hpp"
#include "d4/sketch.hpp"

namespace d4 {

// ---------------------------------------------------------------------------
// Symbolic execution of straight-line code

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { kRef, kLit, kUnary, kBinary, kFetch };
  Kind kind = Kind::kLit;
  bool on_return = false;  // kRef: R instead of D
  std::size_t value = 0;   // kRef: depth below the original top; kLit: literal
  Op op = Op::kNop;        // kUnary (1+/1-), kBinary (arithmetic or comparison)
  ExprPtr a, b;            // operands; kFetch uses a as the address

  static ExprPtr ref(bool ret, std::size_t depth) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::kRef;
    e->on_return = ret;
    e->value = depth;
    return e;
  }
  static ExprPtr lit(std::size_t x) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::kLit;
    e->value = x;
    return e;
  }
  static ExprPtr apply(Kind kind, Op op, ExprPtr a, ExprPtr b = nullptr) {
    auto e = std::make_shared<Expr>();
    e->kind = kind;
    e->op = op;
    e->a = std::move(a);
    e->b = std::move(b);
    return e;
  }
  bool is_ref(bool ret, std::size_t depth) const { return kind == Kind::kRef && on_return == ret && value == depth; }
};

inline std::string to_string(const ExprPtr& e) {
  switch (e->kind) {
    case Expr::Kind::kRef: return std::string(e->on_return ? "R" : "D") + "[" + std::to_string(e->value) + "]";
    case Expr::Kind::kLit: return std::to_string(e->value);
    case Expr::Kind::kUnary: return std::string(op_name(e->op)) + "(" + to_string(e->a) + ")";
    case Expr::Kind::kFetch: return "@(" + to_string(e->a) + ")";
    default: return "(" + to_string(e->a) + " " + std::string(op_name(e->op)) + " " + to_string(e->b) + ")";
  }
}

// Net effect of a straight-line run: pointer moves, changed cells (depth
// below the new top) and ordered heap stores. Cells above the new top are
// not written.
struct SymbolicBlock {
  long d_shift = 0;
  long r_shift = 0;
  std::vector<std::pair<std::size_t, ExprPtr>> d_writes;
  std::vector<std::pair<std::size_t, ExprPtr>> r_writes;
  std::vector<std::pair<ExprPtr, ExprPtr>> heap_writes;  // (address, value)
  std::size_t length = 0;

  // Applies the block to a continuous state.
  DataState apply(const DataState& s, const MachineDims& dims) const;
};

namespace detail {

class SymbolicStack {
 public:
  explicit SymbolicStack(bool ret) : ret_(ret) {}

  ExprPtr pop() {
    if (!top_.empty()) {
      ExprPtr e = top_.back();
      top_.pop_back();
      return e;
    }
    return Expr::ref(ret_, base_++);
  }
  ExprPtr peek(std::size_t depth) const {
    if (depth < top_.size()) return top_[top_.size() - 1 - depth];
    return Expr::ref(ret_, base_ + depth - top_.size());
  }
  void push(ExprPtr e) { top_.push_back(std::move(e)); }

  long shift() const { return static_cast<long>(top_.size()) - static_cast<long>(base_); }
  std::vector<std::pair<std::size_t, ExprPtr>> writes() const {
    std::vector<std::pair<std::size_t, ExprPtr>> out;
    const std::size_t n = top_.size();
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t depth = n - 1 - j;
      // Unchanged when the cell still holds the original value at this row.
      const long original = static_cast<long>(base_) - 1 - static_cast<long>(j);
      if (original >= 0 && top_[j]->is_ref(ret_, static_cast<std::size_t>(original))) continue;
      out.emplace_back(depth, top_[j]);
    }
    return out;
  }

 private:
  bool ret_;
  std::size_t base_ = 0;
  std::vector<ExprPtr> top_;
};

}  // namespace detail

// True for instructions a straight-line block may contain.
inline bool collapsible(Op op) { return is_data_op(op) && op != Op::kNop; }

inline SymbolicBlock symbolic_execute(const std::vector<Instruction>& run) {
  detail::SymbolicStack D(false), R(true);
  SymbolicBlock block;
  block.length = run.size();
  for (const Instruction& in : run) {
    switch (in.op) {
      case Op::kLit: D.push(Expr::lit(in.arg)); break;
      case Op::kInc: case Op::kDec: D.push(Expr::apply(Expr::Kind::kUnary, in.op, D.pop())); break;
      case Op::kDup: D.push(D.peek(0)); break;
      case Op::kSwap: {
        ExprPtr b = D.pop(), a = D.pop();
        D.push(b);
        D.push(a);
        break;
      }
      case Op::kOver: D.push(D.peek(1)); break;
      case Op::kDrop: D.pop(); break;
      case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kDiv:
      case Op::kGt: case Op::kLt: case Op::kEq: {
        ExprPtr b = D.pop(), a = D.pop();
        D.push(Expr::apply(Expr::Kind::kBinary, in.op, a, b));
        break;
      }
      case Op::kFetch:
        if (!block.heap_writes.empty()) throw Error("symbolic_execute: '@' after '!' in one block");
        D.push(Expr::apply(Expr::Kind::kFetch, Op::kFetch, D.pop()));
        break;
      case Op::kStore: {
        ExprPtr addr = D.pop(), value = D.pop();
        block.heap_writes.emplace_back(addr, value);
        break;
      }
      case Op::kToR: R.push(D.pop()); break;
      case Op::kFromR: D.push(R.pop()); break;
      case Op::kFetchR: D.push(R.peek(0)); break;
      default:
        throw Error("symbolic_execute: " + std::string(op_name(in.op)) + " cannot be collapsed");
    }
  }
  block.d_shift = D.shift();
  block.r_shift = R.shift();
  block.d_writes = D.writes();
  block.r_writes = R.writes();
  return block;
}

inline DataState SymbolicBlock::apply(const DataState& s, const MachineDims& dims) const {
  std::unordered_map<const Expr*, Var> memo;
  std::unordered_map<long, Var> d_ptr, r_ptr;
  auto pointer = [&](bool ret, long k) -> Var {
    auto& cache = ret ? r_ptr : d_ptr;
    auto it = cache.find(k);
    if (it != cache.end()) return it->second;
    Var p = k == 0 ? (ret ? s.r : s.d) : ops::shift(ret ? s.r : s.d, k);
    cache.emplace(k, p);
    return p;
  };
  std::function<Var(const ExprPtr&)> eval = [&](const ExprPtr& e) -> Var {
    auto it = memo.find(e.get());
    if (it != memo.end()) return it->second;
    Var out;
    switch (e->kind) {
      case Expr::Kind::kRef:
        out = ops::read(e->on_return ? s.R : s.D, pointer(e->on_return, -static_cast<long>(e->value)));
        break;
      case Expr::Kind::kLit:
        out = constant_one_hot(dims.value, e->value % dims.value);
        break;
      case Expr::Kind::kUnary:
        out = ops::shift(eval(e->a), e->op == Op::kInc ? 1 : -1);
        break;
      case Expr::Kind::kFetch:
        out = ops::read(s.H, ops::heap_address(eval(e->a), dims.heap));
        break;
      case Expr::Kind::kBinary: {
        Var a = eval(e->a), b = eval(e->b);
        if (e->op == Op::kGt) out = ops::greater(a, b);
        else if (e->op == Op::kLt) out = ops::greater(b, a);
        else if (e->op == Op::kEq) out = ops::equal(a, b);
        else out = ops::modular(e->op, a, b);
        break;
      }
    }
    memo.emplace(e.get(), out);
    return out;
  };

  // All reads see the original state.
  std::vector<Var> dv, rv, ha, hv;
  for (const auto& w : d_writes) dv.push_back(eval(w.second));
  for (const auto& w : r_writes) rv.push_back(eval(w.second));
  for (const auto& w : heap_writes) {
    ha.push_back(ops::heap_address(eval(w.first), dims.heap));
    hv.push_back(eval(w.second));
  }
  DataState out = s;
  if (d_shift != 0) out.d = pointer(false, d_shift);
  if (r_shift != 0) out.r = pointer(true, r_shift);
  for (std::size_t k = 0; k < d_writes.size(); ++k) {
    const long at = d_shift - static_cast<long>(d_writes[k].first);
    out.D = ops::write(out.D, dv[k], pointer(false, at));
  }
  for (std::size_t k = 0; k < r_writes.size(); ++k) {
    const long at = r_shift - static_cast<long>(r_writes[k].first);
    out.R = ops::write(out.R, rv[k], pointer(true, at));
  }
  for (std::size_t k = 0; k < heap_writes.size(); ++k) out.H = ops::write(out.H, hv[k], ha[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Plans

struct PlanOptions {
  bool collapse = false;
  bool interpolate = false;
};

struct Transition {
  enum class Kind { kWord, kSlot, kCollapsed, kIfRegion };
  Kind kind = Kind::kWord;
  std::size_t begin = 0;  // program span [begin, end)
  std::size_t end = 0;
  Op op = Op::kNop;       // kWord
  std::size_t arg = 0;    // kWord literal; kSlot slot id
  std::size_t target = 0; // kWord BRANCH/BRANCH0/CALL: plan index
  SymbolicBlock block;    // kCollapsed; kIfRegion then-body
  SymbolicBlock other;    // kIfRegion else-body
};

struct ExecutionPlan {
  std::vector<Transition> transitions;
  std::vector<std::size_t> plan_index;  // program index -> plan index (npos inside a span)
  std::size_t entry = 0;
  std::size_t halt = 0;

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t size() const { return transitions.size(); }
  // Plan index of a program position that starts a transition.
  std::size_t at(std::size_t program_index) const {
    if (program_index >= plan_index.size() || plan_index[program_index] == npos)
      throw Error("program position " + std::to_string(program_index) + " is inside a collapsed span");
    return plan_index[program_index];
  }
};

namespace detail {

// Program positions control can arrive at other than by falling through.
inline std::set<std::size_t> entry_points(const LoweredProgram& prog) {
  std::set<std::size_t> e{prog.entry, prog.halt_index()};
  for (const auto& [name, at] : prog.labels) e.insert(at);
  for (std::size_t i = 0; i < prog.size(); ++i) {
    const Instruction& in = prog.instructions[i];
    if (in.op == Op::kBranch || in.op == Op::kBranch0 || in.op == Op::kCall) e.insert(in.arg);
    if (in.op == Op::kCall) e.insert(i + 1);
    // Anything after a jump or return is only reachable by a jump.
    if (in.op == Op::kBranch || in.op == Op::kRet || in.op == Op::kHalt) e.insert(i + 1);
  }
  return e;
}

inline bool straight_body(const LoweredProgram& prog, std::size_t from, std::size_t to) {
  for (std::size_t k = from; k < to; ++k)
    if (!collapsible(prog.instructions[k].op)) return false;
  return true;
}

}  // namespace detail

inline ExecutionPlan build_plan(const LoweredProgram& prog, const PlanOptions& opts = {}) {
  const auto entries = detail::entry_points(prog);
  std::map<std::size_t, IfRegion> regions;
  if (opts.interpolate) {
    for (const IfRegion& r : prog.if_regions) {
      const std::size_t then_end = r.else_branch ? *r.else_branch : r.end;
      const std::size_t else_begin = r.else_branch ? *r.else_branch + 1 : r.end;
      if (!detail::straight_body(prog, r.branch0 + 1, then_end)) continue;
      if (!detail::straight_body(prog, else_begin, r.end)) continue;
      // Fetches after stores are not expressible in one block.
      try {
        symbolic_execute({prog.instructions.begin() + r.branch0 + 1, prog.instructions.begin() + then_end});
        symbolic_execute({prog.instructions.begin() + else_begin, prog.instructions.begin() + r.end});
      } catch (const Error&) {
        continue;
      }
      bool foreign = false;
      for (std::size_t k = r.branch0 + 1; k < r.end; ++k)
        if (entries.count(k) && k != else_begin) foreign = true;
      for (std::size_t i = 0; i < prog.size() && !foreign; ++i) {
        const Instruction& in = prog.instructions[i];
        const bool jumps = in.op == Op::kBranch || in.op == Op::kBranch0 || in.op == Op::kCall;
        const bool inside = i >= r.branch0 && i < r.end;
        if (jumps && !inside && in.arg > r.branch0 && in.arg < r.end) foreign = true;
      }
      if (!foreign) regions[r.branch0] = r;
    }
  }

  ExecutionPlan plan;
  plan.plan_index.assign(prog.size(), ExecutionPlan::npos);
  for (std::size_t i = 0; i < prog.size();) {
    Transition t;
    t.begin = i;
    const Instruction& in = prog.instructions[i];
    if (auto r = regions.find(i); r != regions.end()) {
      const IfRegion& reg = r->second;
      const std::size_t then_end = reg.else_branch ? *reg.else_branch : reg.end;
      const std::size_t else_begin = reg.else_branch ? *reg.else_branch + 1 : reg.end;
      t.kind = Transition::Kind::kIfRegion;
      t.block = symbolic_execute({prog.instructions.begin() + i + 1, prog.instructions.begin() + then_end});
      t.other = symbolic_execute({prog.instructions.begin() + else_begin, prog.instructions.begin() + reg.end});
      t.end = reg.end;
    } else if (in.op == Op::kSlot) {
      t.kind = Transition::Kind::kSlot;
      t.arg = in.arg;
      t.end = i + 1;
    } else if (opts.collapse && collapsible(in.op)) {
      std::size_t j = i + 1;
      bool stored = in.op == Op::kStore;
      while (j < prog.size() && collapsible(prog.instructions[j].op) && !entries.count(j) && !regions.count(j)) {
        if (prog.instructions[j].op == Op::kFetch && stored) break;
        stored = stored || prog.instructions[j].op == Op::kStore;
        ++j;
      }
      if (j - i >= 2) {
        t.kind = Transition::Kind::kCollapsed;
        t.block = symbolic_execute({prog.instructions.begin() + i, prog.instructions.begin() + j});
      } else {
        t.kind = Transition::Kind::kWord;
        t.op = in.op;
        t.arg = in.arg;
      }
      t.end = j;
    } else {
      t.kind = Transition::Kind::kWord;
      t.op = in.op;
      t.arg = in.arg;
      t.end = i + 1;
    }
    plan.plan_index[i] = plan.transitions.size();
    plan.transitions.push_back(std::move(t));
    i = plan.transitions.back().end;
  }
  for (Transition& t : plan.transitions)
    if (t.kind == Transition::Kind::kWord && (t.op == Op::kBranch || t.op == Op::kBranch0 || t.op == Op::kCall))
      t.target = plan.at(prog.instructions[t.begin].arg);
  plan.entry = plan.at(prog.entry);
  plan.halt = plan.at(prog.halt_index());
  return plan;
}

// One row per transition: index, opcode or span label, argument.
inline std::string dump_plan(const ExecutionPlan& plan) {
  std::ostringstream os;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const Transition& t = plan.transitions[k];
    os << k << '\t';
    switch (t.kind) {
      case Transition::Kind::kCollapsed: os << "collapsed[" << t.begin << ".." << t.end - 1 << "]\t"; break;
      case Transition::Kind::kIfRegion: os << "interpIf[" << t.begin << ".." << t.end - 1 << "]\t"; break;
      case Transition::Kind::kSlot: os << "SLOT\t" << t.arg; break;
      case Transition::Kind::kWord:
        os << op_name(t.op) << '\t';
        if (t.op == Op::kLit) os << t.arg;
        if (t.op == Op::kBranch || t.op == Op::kBranch0 || t.op == Op::kCall) os << t.target;
        break;
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Execution

class NonFiniteState : public Error {
 public:
  explicit NonFiniteState(std::size_t step) : Error("non-finite machine state at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct Executor {
  const LoweredProgram* program = nullptr;
  ExecutionPlan plan;
  MachineDims dims;
  const std::vector<SlotSpec>* slots = nullptr;
  const ParameterStore* params = nullptr;
  double floor = 0.0;  // transitions with c_i <= floor are skipped

  static Executor make(const LoweredProgram& prog, const MachineDims& dims, const PlanOptions& opts = {}) {
    Executor ex;
    ex.program = &prog;
    ex.plan = build_plan(prog, opts);
    ex.dims = dims;
    if (prog.has_calls() && ex.plan.size() > dims.value)
      throw CompileError("plan of " + std::to_string(ex.plan.size()) + " transitions exceeds value size " +
                         std::to_string(dims.value) + " needed for return addresses");
    return ex;
  }
  static Executor make(const Sketch& sketch, const PlanOptions& opts = {}) {
    Executor ex = make(sketch.program, sketch.dims, opts);
    ex.slots = &sketch.slots;
    ex.params = &sketch.params;
    return ex;
  }

  ContinuousState initial(const DiscreteState& s) const { return encode(s, dims, plan.entry, plan.size()); }
  ContinuousState initial(const std::vector<std::size_t>& data) const {
    DiscreteState s;
    s.D = data;
    s.H.assign(dims.heap, 0);
    return initial(s);
  }

  Successor transition(std::size_t k, const DataState& s) const {
    const Transition& t = plan.transitions[k];
    switch (t.kind) {
      case Transition::Kind::kWord: {
        WordContext ctx{k, k + 1, t.target, plan.halt, plan.size()};
        return apply_word(t.op, t.arg, s, ctx, dims);
      }
      case Transition::Kind::kSlot:
        if (slots == nullptr || params == nullptr || t.arg >= slots->size())
          throw Error("slot transition without sketch parameters");
        return {apply_slot((*slots)[t.arg], *params, s, dims), ops::PcOutcome::jump(k + 1)};
      case Transition::Kind::kCollapsed:
        return {t.block.apply(s, dims), ops::PcOutcome::jump(k + 1)};
      case Transition::Kind::kIfRegion: {
        DataState popped = s;
        Var x = ops::read(s.D, s.d);
        popped.d = ops::shift(s.d, -1);
        const DataState yes = t.block.apply(popped, dims);
        const DataState no = t.other.apply(popped, dims);
        Var w = ops::branch_weights(x);
        auto blend = [&](const Var& a, const Var& b) { return ops::mix(w, {{0, a}, {1, b}}); };
        return {{blend(yes.D, no.D), blend(yes.d, no.d), blend(yes.R, no.R), blend(yes.r, no.r), blend(yes.H, no.H)},
                ops::PcOutcome::jump(k + 1)};
      }
    }
    throw Error("unknown transition kind");
  }

  // S' = Σ_i c_i w_i(S). Sets *used_slot when a slot carried weight.
  ContinuousState step(const ContinuousState& s, bool* used_slot = nullptr) const {
    const Tensor& c = s.c.value();
    if (c.size() != plan.size()) throw ShapeError("counter has " + std::to_string(c.size()) + " positions, plan has " + std::to_string(plan.size()));
    std::vector<ops::MixEntry> D, d, R, r, H;
    std::vector<ops::PcEntry> pcs;
    const DataState data = s.data();
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (!(c[k] > floor)) continue;
      if (used_slot && plan.transitions[k].kind == Transition::Kind::kSlot) *used_slot = true;
      Successor next = transition(k, data);
      D.push_back({k, next.data.D});
      d.push_back({k, next.data.d});
      R.push_back({k, next.data.R});
      r.push_back({k, next.data.r});
      H.push_back({k, next.data.H});
      pcs.push_back({k, std::move(next.pc)});
    }
    if (pcs.empty()) throw Error("counter carries no weight above the floor");
    return {ops::mix(s.c, D), ops::mix(s.c, d), ops::mix(s.c, R), ops::mix(s.c, r), ops::mix(s.c, H),
            ops::pc_mix(s.c, pcs)};
  }

  bool halted(const ContinuousState& s) const { return s.c.value()[plan.halt] == 1.0; }
};

struct RunOptions {
  std::size_t max_steps = 0;  // T
  bool discretize = false;    // test-time rounding after each step
  bool early_stop = true;     // stop once all counter mass sits on HALT
  bool record_trace = false;  // keep c after every step
  bool check_finite = true;
};

struct RunOutput {
  ContinuousState state;
  std::size_t steps = 0;
  bool halted = false;
  std::vector<Tensor> trace;  // c after each step
};

namespace detail {

inline bool finite(const ContinuousState& s) {
  for (const Var* v : {&s.D, &s.d, &s.R, &s.r, &s.H, &s.c})
    for (double z : v->value().data())
      if (!std::isfinite(z)) return false;
  return true;
}

}  // namespace detail

// Runs at most T steps (HALT is a fixed point, so stopping early on an exact
// HALT counter changes nothing).
inline RunOutput run(const ContinuousState& s0, const Executor& ex, const RunOptions& opts) {
  RunOutput out;
  out.state = opts.discretize ? discretize(s0) : s0;
  for (std::size_t t = 0; t < opts.max_steps; ++t) {
    if (opts.early_stop && ex.halted(out.state)) break;
    bool used_slot = false;
    out.state = ex.step(out.state, &used_slot);
    ++out.steps;
    if (opts.check_finite && !detail::finite(out.state)) throw NonFiniteState(out.steps);
    if (opts.discretize && (used_slot || !is_one_hot(out.state.c.value()))) out.state = discretize(out.state);
    if (opts.record_trace) out.trace.push_back(out.state.c.value());
  }
  out.halted = ex.halted(out.state);
  return out;
}

// Discretized evaluation on the discrete machine: primitive words run
// exactly, slots run on the one-hot encoding of the current state and are
// rounded back. Matches run(..., discretize = true) whenever no discrete
// fault occurs; callers fall back to the continuous run on a fault.
struct HybridOutput {
  DiscreteState state;
  std::size_t steps = 0;
  bool halted = false;
};

inline HybridOutput run_hybrid(DiscreteState s, const Executor& ex, std::size_t max_steps) {
  NoGradScope no_grad;
  const LoweredProgram& prog = *ex.program;
  HybridOutput out;
  while (out.steps < max_steps) {
    const Instruction& in = prog.instructions.at(s.c);
    if (in.op == Op::kHalt) break;
    if (in.op == Op::kSlot) {
      if (ex.slots == nullptr || ex.params == nullptr) throw Error("slot without sketch parameters");
      const std::size_t next = s.c + 1;
      ContinuousState cs = encode(s, ex.dims, s.c, prog.size());
      DataState d = apply_slot(ex.slots->at(in.arg), *ex.params, cs.data(), ex.dims);
      s = decode(discretize(ContinuousState::from(d, cs.c)));
      s.c = next;
    } else {
      s = step_discrete(s, prog, ex.dims);
    }
    ++out.steps;
  }
  out.halted = prog.instructions.at(s.c).op == Op::kHalt;
  out.state = std::move(s);
  return out;
}

// CSV: one row per step, one column per counter position.
inline std::string emit_trace(const std::vector<Tensor>& trace) {
  std::ostringstream os;
  os.precision(8);
  const std::size_t p = trace.empty() ? 0 : trace.front().size();
  os << "step";
  for (std::size_t k = 0; k < p; ++k) os << ",c" << k;
  os << '\n';
  for (std::size_t t = 0; t < trace.size(); ++t) {
    os << t + 1;
    for (double z : trace[t].data()) os << ',' << z;
    os << '\n';
  }
  return os.str();
}

}  // namespace d4

#endif  // D4_EXECUTOR_HPP_
