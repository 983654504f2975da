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

// The continuous machine. Every buffer row and every pointer is a
// distribution; each primitive word is a differentiable map built from
// read/write at soft pointers, circular shifts and modular op tensors.
//
// Stack layout: a stack holding k items uses rows 0..k-1 and its pointer is
// one_hot(k - 1); the empty stack points at row l - 1.

#ifndef D4_MACHINE_HPP_
#define D4_MACHINE_HPP_

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "d4/autodiff.hpp"
#include "d4/forth.hpp"
#include "d4/tensor.hpp"

namespace d4 {

// ---------------------------------------------------------------------------
// Reference matrices. The fused ops below never materialize these; tests use
// them as the literal formulation.

// Row i has its 1 at column (i + k) mod n, so aᵀ·shift_matrix(n, 1) = inc(a).
inline Tensor shift_matrix(std::size_t n, long k) {
  Tensor m = Tensor::matrix(n, n);
  const long sn = static_cast<long>(n);
  for (long i = 0; i < sn; ++i) m(i, static_cast<std::size_t>(((i + k) % sn + sn) % sn)) = 1.0;
  return m;
}

inline std::size_t modular_result(Op op, std::size_t i, std::size_t j, std::size_t v) {
  switch (op) {
    case Op::kAdd: return (i + j) % v;
    case Op::kSub: return (i + v - j) % v;
    case Op::kMul: return (i * j) % v;
    case Op::kDiv: return j == 0 ? 0 : (i / j) % v;
    default: throw Error("modular_result: not an arithmetic op");
  }
}

// Flattened v x v x v tensor, entry (i, j, k) at (i * v + j) * v + k.
inline std::vector<double> op_tensor(Op op, std::size_t v) {
  std::vector<double> t(v * v * v, 0.0);
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) t[(i * v + j) * v + modular_result(op, i, j, v)] = 1.0;
  return t;
}

inline double phi_pwl(double x) { return std::min(std::max(0.0, x + 0.5), 1.0); }

// ---------------------------------------------------------------------------
// Fused differentiable primitives

namespace ops {

// Circular shift of a vector: out[(i + k) mod n] = a[i].
inline Var shift(const Var& a, long k) {
  const Tensor& av = a.value();
  const long n = static_cast<long>(av.size());
  const long s = ((k % n) + n) % n;
  Tensor out = Tensor::vector(av.size());
  for (long i = 0; i < n; ++i) out[(i + s) % n] = av[i];
  return make_op(std::move(out), {&a}, [a, s, n](const Tensor& g) {
    if (Tensor* ga = a.grad_sink())
      for (long i = 0; i < n; ++i) (*ga)[i] += g[(i + s) % n];
  });
}

// aᵀM.
inline Var read(const Var& M, const Var& a) {
  const Tensor& m = M.value();
  const Tensor& av = a.value();
  if (m.rank() != 2 || av.size() != m.rows()) throw ShapeError("read: " + m.shape_string() + " with pointer " + av.shape_string());
  Tensor out = Tensor::vector(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (av[i] == 0.0) continue;
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += av[i] * m(i, j);
  }
  return make_op(std::move(out), {&M, &a}, [M, a](const Tensor& g) {
    const Tensor& m = M.value();
    const Tensor& av = a.value();
    if (Tensor* gM = M.grad_sink())
      for (std::size_t i = 0; i < m.rows(); ++i)
        if (av[i] != 0.0)
          for (std::size_t j = 0; j < m.cols(); ++j) (*gM)(i, j) += av[i] * g[j];
    if (Tensor* ga = a.grad_sink())
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * g[j];
        (*ga)[i] += acc;
      }
  });
}

// Row i becomes M_i + a_i (x - M_i).
inline Var write(const Var& M, const Var& x, const Var& a) {
  const Tensor& m = M.value();
  const Tensor& xv = x.value();
  const Tensor& av = a.value();
  if (m.rank() != 2 || av.size() != m.rows() || xv.size() != m.cols())
    throw ShapeError("write: " + m.shape_string() + " value " + xv.shape_string() + " pointer " + av.shape_string());
  Tensor out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (av[i] == 0.0) continue;
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += av[i] * (xv[j] - m(i, j));
  }
  return make_op(std::move(out), {&M, &x, &a}, [M, x, a](const Tensor& g) {
    const Tensor& m = M.value();
    const Tensor& xv = x.value();
    const Tensor& av = a.value();
    if (Tensor* gM = M.grad_sink())
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) (*gM)(i, j) += (1.0 - av[i]) * g(i, j);
    if (Tensor* gx = x.grad_sink())
      for (std::size_t i = 0; i < m.rows(); ++i)
        if (av[i] != 0.0)
          for (std::size_t j = 0; j < m.cols(); ++j) (*gx)[j] += av[i] * g(i, j);
    if (Tensor* ga = a.grad_sink())
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += g(i, j) * (xv[j] - m(i, j));
        (*ga)[i] += acc;
      }
  });
}

// aᵀ R^op b with a the NOS value and b the TOS value.
inline Var modular(Op op, const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t v = av.size();
  if (bv.size() != v) throw ShapeError("modular: " + av.shape_string() + " vs " + bv.shape_string());
  Tensor out = Tensor::vector(v);
  for (std::size_t i = 0; i < v; ++i) {
    if (av[i] == 0.0) continue;
    for (std::size_t j = 0; j < v; ++j)
      if (bv[j] != 0.0) out[modular_result(op, i, j, v)] += av[i] * bv[j];
  }
  return make_op(std::move(out), {&a, &b}, [op, a, b, v](const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor* ga = a.grad_sink();
    Tensor* gb = b.grad_sink();
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j) {
        const double gk = g[modular_result(op, i, j, v)];
        if (ga) (*ga)[i] += gk * bv[j];
        if (gb) (*gb)[j] += gk * av[i];
      }
  });
}

// p·one_hot(1) + (1 - p)·one_hot(0) as a length-v vector.
inline Tensor truth_vector(double p, std::size_t v) {
  Tensor out = Tensor::vector(v);
  out[0] = 1.0 - p;
  out[1] = p;
  return out;
}

// Soft NOS > TOS: p = phi_pwl(E[NOS] - E[TOS] - 0.5), exact 0/1 on integers.
// The kinks of phi_pwl carry zero slope.
inline Var greater(const Var& nos, const Var& tos) {
  const Tensor& a = nos.value();
  const Tensor& b = tos.value();
  const std::size_t v = a.size();
  if (v < 2 || b.size() != v) throw ShapeError("greater: " + a.shape_string() + " vs " + b.shape_string());
  double ea = 0.0, eb = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    ea += static_cast<double>(i) * a[i];
    eb += static_cast<double>(i) * b[i];
  }
  const double x = ea - eb - 0.5;
  const double p = phi_pwl(x);
  const double slope = (x + 0.5 > 0.0 && x + 0.5 < 1.0) ? 1.0 : 0.0;
  return make_op(truth_vector(p, v), {&nos, &tos}, [nos, tos, v, slope](const Tensor& g) {
    const double dp = slope * (g[1] - g[0]);
    if (dp == 0.0) return;
    if (Tensor* ga = nos.grad_sink())
      for (std::size_t i = 0; i < v; ++i) (*ga)[i] += dp * static_cast<double>(i);
    if (Tensor* gb = tos.grad_sink())
      for (std::size_t i = 0; i < v; ++i) (*gb)[i] -= dp * static_cast<double>(i);
  });
}

// Soft equality p = <NOS, TOS>.
inline Var equal(const Var& nos, const Var& tos) {
  const Tensor& a = nos.value();
  const Tensor& b = tos.value();
  const std::size_t v = a.size();
  if (v < 2 || b.size() != v) throw ShapeError("equal: " + a.shape_string() + " vs " + b.shape_string());
  double p = 0.0;
  for (std::size_t i = 0; i < v; ++i) p += a[i] * b[i];
  return make_op(truth_vector(p, v), {&nos, &tos}, [nos, tos, v](const Tensor& g) {
    const double dp = g[1] - g[0];
    if (Tensor* ga = nos.grad_sink())
      for (std::size_t i = 0; i < v; ++i) (*ga)[i] += dp * tos.value()[i];
    if (Tensor* gb = tos.grad_sink())
      for (std::size_t i = 0; i < v; ++i) (*gb)[i] += dp * nos.value()[i];
  });
}

// Σ_k w[idx_k] · xs_k. Entries sharing a node are merged first; if only one
// node remains it is returned as is, which is exact for weights summing to 1.
struct MixEntry {
  std::size_t index;
  Var value;
};

inline Var mix(const Var& w, const std::vector<MixEntry>& entries) {
  if (entries.empty()) throw Error("mix: no entries");
  struct Group {
    Var value;
    std::vector<std::size_t> idx;
  };
  std::vector<Group> groups;
  for (const MixEntry& e : entries) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.value.same(e.value); });
    if (it == groups.end()) groups.push_back({e.value, {e.index}});
    else it->idx.push_back(e.index);
  }
  if (groups.size() == 1) return groups.front().value;
  const Tensor& wv = w.value();
  Tensor out = Tensor::zeros_like(groups.front().value.value());
  std::vector<Var> parents{w};
  for (const Group& g : groups) {
    if (!g.value.value().same_shape(out)) throw ShapeError("mix: entries differ in shape");
    double wg = 0.0;
    for (std::size_t i : g.idx) wg += wv[i];
    const Tensor& x = g.value.value();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += wg * x[k];
    parents.push_back(g.value);
  }
  return make_op(std::move(out), parents, [w, groups](const Tensor& g) {
    Tensor* gw = w.grad_sink();
    const Tensor& wv = w.value();
    for (const Group& grp : groups) {
      const Tensor& x = grp.value.value();
      double wg = 0.0;
      for (std::size_t i : grp.idx) wg += wv[i];
      if (Tensor* gx = grp.value.grad_sink())
        for (std::size_t k = 0; k < x.size(); ++k) (*gx)[k] += wg * g[k];
      if (gw) {
        double dot = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) dot += g[k] * x[k];
        for (std::size_t i : grp.idx) (*gw)[i] += dot;
      }
    }
  });
}

// Program-counter successor of one transition.
struct PcOutcome {
  enum class Kind { kJump, kCond, kDense };
  Kind kind = Kind::kJump;
  std::size_t target = 0;  // kJump, kCond (taken when the popped value is 0)
  std::size_t next = 0;    // kCond fallthrough
  Var value;               // kCond: popped value distribution; kDense: full counter

  static PcOutcome jump(std::size_t t) { return {Kind::kJump, t, 0, {}}; }
  static PcOutcome cond(Var x, std::size_t t, std::size_t n) { return {Kind::kCond, t, n, std::move(x)}; }
  static PcOutcome dense(Var c) { return {Kind::kDense, 0, 0, std::move(c)}; }
};

struct PcEntry {
  std::size_t index;
  PcOutcome outcome;
};

// c' = Σ_i c_i · outcome_i.
inline Var pc_mix(const Var& c, const std::vector<PcEntry>& entries) {
  const Tensor& cv = c.value();
  const std::size_t p = cv.size();
  Tensor out = Tensor::vector(p);
  std::vector<Var> parents{c};
  for (const PcEntry& e : entries) {
    const double w = cv[e.index];
    const PcOutcome& o = e.outcome;
    switch (o.kind) {
      case PcOutcome::Kind::kJump:
        out[o.target] += w;
        break;
      case PcOutcome::Kind::kCond: {
        const double q = o.value.value()[0];
        out[o.target] += w * q;
        out[o.next] += w * (1.0 - q);
        parents.push_back(o.value);
        break;
      }
      case PcOutcome::Kind::kDense: {
        const Tensor& y = o.value.value();
        if (y.size() != p) throw ShapeError("pc_mix: dense counter " + y.shape_string() + " vs " + cv.shape_string());
        for (std::size_t k = 0; k < p; ++k) out[k] += w * y[k];
        parents.push_back(o.value);
        break;
      }
    }
  }
  return make_op(std::move(out), parents, [c, entries](const Tensor& g) {
    Tensor* gc = c.grad_sink();
    const Tensor& cv = c.value();
    for (const PcEntry& e : entries) {
      const double w = cv[e.index];
      const PcOutcome& o = e.outcome;
      switch (o.kind) {
        case PcOutcome::Kind::kJump:
          if (gc) (*gc)[e.index] += g[o.target];
          break;
        case PcOutcome::Kind::kCond: {
          const double q = o.value.value()[0];
          if (gc) (*gc)[e.index] += q * g[o.target] + (1.0 - q) * g[o.next];
          if (Tensor* gx = o.value.grad_sink()) (*gx)[0] += w * (g[o.target] - g[o.next]);
          break;
        }
        case PcOutcome::Kind::kDense: {
          const Tensor& y = o.value.value();
          if (gc) {
            double dot = 0.0;
            for (std::size_t k = 0; k < y.size(); ++k) dot += g[k] * y[k];
            (*gc)[e.index] += dot;
          }
          if (Tensor* gy = o.value.grad_sink())
            for (std::size_t k = 0; k < y.size(); ++k) (*gy)[k] += w * g[k];
          break;
        }
      }
    }
  });
}

// Return address distribution (length v) to a counter of length p; mass on
// addresses >= p lands on `halt`. The result is divided by the mass of x:
// without that, rounding drift in R feeds back through the counter and grows
// geometrically over long runs.
inline Var fold_address(const Var& x, std::size_t p, std::size_t halt) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::vector(p);
  double mass = 0.0;
  for (std::size_t k = 0; k < xv.size(); ++k) {
    out[k < p ? k : halt] += xv[k];
    mass += xv[k];
  }
  if (!(mass > 0.0)) throw Error("fold_address: return address has no mass");
  for (double& z : out.data()) z /= mass;
  Tensor folded = out;
  return make_op(std::move(out), {&x}, [x, p, halt, mass, folded](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    double mean = 0.0;
    for (std::size_t k = 0; k < p; ++k) mean += g[k] * folded[k];
    for (std::size_t k = 0; k < gx->size(); ++k) (*gx)[k] += (g[k < p ? k : halt] - mean) / mass;
  });
}

// Address distribution (length v) over the h heap rows, wrapping addresses
// mod h so a soft address keeps its full mass.
inline Var heap_address(const Var& a, std::size_t h) {
  const Tensor& av = a.value();
  if (av.size() == h) return a;
  Tensor out = Tensor::vector(h);
  for (std::size_t k = 0; k < av.size(); ++k) out[k % h] += av[k];
  return make_op(std::move(out), {&a}, [a, h](const Tensor& g) {
    if (Tensor* ga = a.grad_sink())
      for (std::size_t k = 0; k < ga->size(); ++k) (*ga)[k] += g[k % h];
  });
}

// [1 - x0, x0]: weights of the then and else branch for a popped condition.
inline Var branch_weights(const Var& x) {
  const double q = x.value()[0];
  return make_op(Tensor::vector({1.0 - q, q}), {&x}, [x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink()) (*gx)[0] += g[1] - g[0];
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// State

// D, d, R, r, H: buffers and pointers. The counter lives separately because
// transitions report it symbolically (see ops::PcOutcome).
struct DataState {
  Var D, d, R, r, H;
};

struct ContinuousState {
  Var D, d, R, r, H, c;

  DataState data() const { return {D, d, R, r, H}; }
  static ContinuousState from(const DataState& s, Var c) { return {s.D, s.d, s.R, s.r, s.H, std::move(c)}; }
};

inline Var constant_one_hot(std::size_t n, std::size_t k) { return Var::constant(Tensor::one_hot(n, k)); }

// Pointers and values of one stack.
inline Var stack_pointer(std::size_t depth, std::size_t l) { return constant_one_hot(l, depth == 0 ? l - 1 : depth - 1); }

inline Tensor stack_buffer(const std::vector<std::size_t>& items, const MachineDims& dims) {
  if (items.size() > dims.capacity())
    throw ShapeError("stack of " + std::to_string(items.size()) + " items exceeds capacity " + std::to_string(dims.capacity()));
  Tensor m = Tensor::matrix(dims.stack, dims.value);
  for (std::size_t i = 0; i < dims.stack; ++i) {
    const std::size_t x = i < items.size() ? items[i] : 0;
    if (x >= dims.value) throw ShapeError("value " + std::to_string(x) + " outside range " + std::to_string(dims.value));
    m(i, x) = 1.0;
  }
  return m;
}

// One-hot encoding of a discrete state. `pc` is the counter position and
// `positions` the counter length.
inline ContinuousState encode(const DiscreteState& s, const MachineDims& dims, std::size_t pc, std::size_t positions) {
  ContinuousState out;
  out.D = Var::constant(stack_buffer(s.D, dims));
  out.d = stack_pointer(s.D.size(), dims.stack);
  out.R = Var::constant(stack_buffer(s.R, dims));
  out.r = stack_pointer(s.R.size(), dims.stack);
  Tensor h = Tensor::matrix(dims.heap, dims.value);
  for (std::size_t i = 0; i < dims.heap; ++i) {
    const std::size_t x = i < s.H.size() ? s.H[i] : 0;
    if (x >= dims.value) throw ShapeError("heap value outside range");
    h(i, x) = 1.0;
  }
  out.H = Var::constant(std::move(h));
  out.c = constant_one_hot(positions, pc);
  return out;
}

// Argmax reading of a state: depth from the pointer, items from rows.
// Returns the counter position in `pc`.
inline DiscreteState decode(const ContinuousState& s, std::size_t* pc = nullptr) {
  auto stack = [](const Var& M, const Var& p) {
    const std::size_t l = p.value().size();
    const std::size_t depth = (argmax(p.value().data()) + 1) % l;
    std::vector<std::size_t> items(depth);
    for (std::size_t i = 0; i < depth; ++i) items[i] = argmax(M.value().row(i));
    return items;
  };
  DiscreteState out;
  out.D = stack(s.D, s.d);
  out.R = stack(s.R, s.r);
  out.H.resize(s.H.value().rows());
  for (std::size_t i = 0; i < out.H.size(); ++i) out.H[i] = argmax(s.H.value().row(i));
  out.c = argmax(s.c.value().data());
  if (pc) *pc = out.c;
  return out;
}

namespace detail {

inline Tensor one_hot_rows(const Tensor& m) {
  Tensor out = Tensor::zeros_like(m);
  for (std::size_t i = 0; i < m.rows(); ++i) out(i, argmax(m.row(i))) = 1.0;
  return out;
}

inline Tensor one_hot_vector(const Tensor& x) { return Tensor::one_hot(x.size(), argmax(x.data())); }

}  // namespace detail

// Every distribution replaced by the one-hot at its argmax (lowest index on
// ties). The result is constant: no gradient flows through discretization.
inline ContinuousState discretize(const ContinuousState& s) {
  return {Var::constant(detail::one_hot_rows(s.D.value())), Var::constant(detail::one_hot_vector(s.d.value())),
          Var::constant(detail::one_hot_rows(s.R.value())), Var::constant(detail::one_hot_vector(s.r.value())),
          Var::constant(detail::one_hot_rows(s.H.value())), Var::constant(detail::one_hot_vector(s.c.value()))};
}

inline bool is_one_hot(const Tensor& x) {
  std::size_t ones = 0;
  for (double z : x.data()) {
    if (z == 1.0) ++ones;
    else if (z != 0.0) return false;
  }
  return ones == 1;
}

// ---------------------------------------------------------------------------
// Words

// Stack helpers on a DataState.
struct StackOps {
  const MachineDims& dims;

  Var top(const Var& M, const Var& p) const { return ops::read(M, p); }
  Var below(const Var& M, const Var& p, long k) const { return ops::read(M, ops::shift(p, -k)); }
  void push(Var& M, Var& p, const Var& x) const {
    p = ops::shift(p, 1);
    M = ops::write(M, x, p);
  }
  Var pop(const Var& M, Var& p) const {
    Var x = ops::read(M, p);
    p = ops::shift(p, -1);
    return x;
  }
};

// Data words: everything that falls through to the next instruction.
inline DataState apply_data(Op op, std::size_t arg, const DataState& in, const MachineDims& dims) {
  StackOps st{dims};
  DataState s = in;
  switch (op) {
    case Op::kLit:
      st.push(s.D, s.d, constant_one_hot(dims.value, arg % dims.value));
      break;
    case Op::kInc:
    case Op::kDec: {
      Var x = st.top(s.D, s.d);
      s.D = ops::write(s.D, ops::shift(x, op == Op::kInc ? 1 : -1), s.d);
      break;
    }
    case Op::kDup:
      st.push(s.D, s.d, st.top(s.D, s.d));
      break;
    case Op::kSwap: {
      Var below = ops::shift(s.d, -1);
      Var x = ops::read(s.D, s.d);
      Var y = ops::read(s.D, below);
      s.D = ops::write(ops::write(s.D, y, s.d), x, below);
      break;
    }
    case Op::kOver:
      st.push(s.D, s.d, st.below(s.D, s.d, 1));
      break;
    case Op::kDrop:
      s.d = ops::shift(s.d, -1);
      break;
    case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kDiv:
    case Op::kGt: case Op::kLt: case Op::kEq: {
      Var below = ops::shift(s.d, -1);
      Var b = ops::read(s.D, s.d);
      Var a = ops::read(s.D, below);
      Var r;
      if (op == Op::kGt) r = ops::greater(a, b);
      else if (op == Op::kLt) r = ops::greater(b, a);
      else if (op == Op::kEq) r = ops::equal(a, b);
      else r = ops::modular(op, a, b);
      s.d = below;
      s.D = ops::write(s.D, r, below);
      break;
    }
    case Op::kFetch: {
      Var addr = ops::heap_address(ops::read(s.D, s.d), dims.heap);
      s.D = ops::write(s.D, ops::read(s.H, addr), s.d);
      break;
    }
    case Op::kStore: {
      Var addr = ops::heap_address(st.pop(s.D, s.d), dims.heap);
      Var x = st.pop(s.D, s.d);
      s.H = ops::write(s.H, x, addr);
      break;
    }
    case Op::kToR:
      st.push(s.R, s.r, st.pop(s.D, s.d));
      break;
    case Op::kFromR:
      st.push(s.D, s.d, st.pop(s.R, s.r));
      break;
    case Op::kFetchR:
      st.push(s.D, s.d, st.top(s.R, s.r));
      break;
    case Op::kNop:
      break;
    default:
      throw Error(std::string("apply_data: ") + std::string(op_name(op)) + " is not a data word");
  }
  return s;
}

struct Successor {
  DataState data;
  ops::PcOutcome pc;
};

// Addresses for one word: its own position, the fallthrough, the branch or
// call target, the HALT position and the counter length, all in the space
// of counter positions.
struct WordContext {
  std::size_t self = 0;
  std::size_t next = 0;
  std::size_t target = 0;
  std::size_t halt = 0;
  std::size_t positions = 0;
};

inline Successor apply_word(Op op, std::size_t arg, const DataState& in, const WordContext& ctx, const MachineDims& dims) {
  StackOps st{dims};
  switch (op) {
    case Op::kBranch:
      return {in, ops::PcOutcome::jump(ctx.target)};
    case Op::kBranch0: {
      DataState s = in;
      Var x = st.pop(s.D, s.d);
      return {s, ops::PcOutcome::cond(x, ctx.target, ctx.next)};
    }
    case Op::kCall: {
      if (ctx.next >= dims.value) throw ShapeError("return address " + std::to_string(ctx.next) + " does not fit value size");
      DataState s = in;
      st.push(s.R, s.r, constant_one_hot(dims.value, ctx.next));
      return {s, ops::PcOutcome::jump(ctx.target)};
    }
    case Op::kRet: {
      DataState s = in;
      Var x = st.pop(s.R, s.r);
      return {s, ops::PcOutcome::dense(ops::fold_address(x, ctx.positions, ctx.halt))};
    }
    case Op::kHalt:
      return {in, ops::PcOutcome::jump(ctx.self)};
    case Op::kSlot:
      throw Error("apply_word: SLOT transitions belong to the sketch module");
    default:
      return {apply_data(op, arg, in, dims), ops::PcOutcome::jump(ctx.next)};
  }
}

// Full successor state of a single word with the counter materialized, for
// callers outside the execution loop.
inline ContinuousState step_word(Op op, std::size_t arg, const ContinuousState& s, const WordContext& ctx,
                                 const MachineDims& dims) {
  Successor succ = apply_word(op, arg, s.data(), ctx, dims);
  Var c = ops::pc_mix(constant_one_hot(ctx.positions, ctx.self), {{ctx.self, succ.pc}});
  return ContinuousState::from(succ.data, c);
}

// ---------------------------------------------------------------------------
// Debug dump

inline std::string state_csv_header() { return "step,D,d,r,c"; }

// step, argmax D rows up to depth (space separated), argmax d, argmax r,
// full counter distribution (space separated).
inline std::string state_csv_row(std::size_t step, const ContinuousState& s) {
  std::ostringstream os;
  os.precision(6);
  const std::size_t l = s.d.value().size();
  const std::size_t depth = (argmax(s.d.value().data()) + 1) % l;
  os << step << ',';
  for (std::size_t i = 0; i < depth; ++i) os << (i ? " " : "") << argmax(s.D.value().row(i));
  os << ',' << argmax(s.d.value().data()) << ',' << argmax(s.r.value().data()) << ',';
  for (std::size_t k = 0; k < s.c.value().size(); ++k) os << (k ? " " : "") << s.c.value()[k];
  return os.str();
}

}  // namespace d4

#endif  // D4_MACHINE_HPP_
