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

// Define-by-run reverse-mode automatic differentiation over rank 0-2 tensors.
//
// A Var is a shared handle to an immutable Node. Nodes that depend on a
// trainable leaf are recorded, in creation order, on the Tape that is active
// on the current thread; everything else is a plain value and is released as
// soon as no handle refers to it. Creation order is a topological order, so
// backward() is a single reverse sweep over the tape.

#ifndef D4_AUTODIFF_HPP_
#define D4_AUTODIFF_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "d4/tensor.hpp"

namespace d4 {

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = false;
  std::string name;
  std::function<void(const Tensor&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var leaf(Tensor value, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->is_leaf = true;
    n->name = std::move(name);
    return Var(std::move(n));
  }

  explicit operator bool() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  // Gradient accumulated so far; zero tensor when nothing flowed here.
  Tensor grad() const { return node_->grad.empty() ? Tensor::zeros_like(node_->value) : node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  Node* node() const { return node_.get(); }
  bool same(const Var& o) const { return node_ == o.node_; }

  // Adds g into this node's gradient accumulator if it is differentiable.
  void accumulate(const Tensor& g) const {
    if (!requires_grad()) return;
    node_->grad_buffer() += g;
  }
  // Pointer into the accumulator, or nullptr when no gradient is wanted.
  Tensor* grad_sink() const { return requires_grad() ? &node_->grad_buffer() : nullptr; }

 private:
  std::shared_ptr<Node> node_;
};

// Records differentiable nodes for one forward pass. Confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  void record(const std::shared_ptr<Node>& n) {
    if (done_) throw Error("tape already consumed by backward(); reset() before recording");
    nodes_.push_back(n);
  }
  void note_leaf(Node* leaf) { leaves_.insert(leaf); }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Leaf gradients accumulate.
  void backward(const Var& loss) {
    if (done_) throw Error("backward() called twice without reset()");
    if (loss.value().size() != 1)
      throw ShapeError("backward() needs a scalar loss, got " + loss.value().shape_string());
    done_ = true;
    if (!loss.requires_grad()) return;
    Tensor seed = Tensor::zeros_like(loss.value());
    seed[0] = 1.0;
    loss.accumulate(seed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n.grad);
    }
  }

  // Drops recorded nodes. Leaf gradients are zeroed unless keep_leaf_grads.
  void reset(bool keep_leaf_grads = false) {
    nodes_.clear();
    if (!keep_leaf_grads)
      for (Node* l : leaves_) l->grad.fill(0.0);
    leaves_.clear();
    done_ = false;
  }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  std::unordered_set<Node*> leaves_;
  bool done_ = false;
};

// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording on this thread for the scope's lifetime; ops then
// produce plain values even when their inputs are trainable.
class NoGradScope {
 public:
  NoGradScope() : previous_(enabled()) { enabled() = false; }
  ~NoGradScope() { enabled() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

 private:
  bool previous_;
};

// Builds a result node. `bw` receives the output gradient and pushes
// contributions into the parents; it is kept only when some parent is
// differentiable, so constant-only subgraphs cost nothing beyond the value.
template <typename Backward>
Var make_op(Tensor value, std::initializer_list<const Var*> parents, Backward&& bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (NoGradScope::enabled())
    for (const Var* p : parents) needs = needs || p->requires_grad();
  if (needs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw Error("differentiable op evaluated without an active Tape");
    for (const Var* p : parents)
      if (p->requires_grad() && p->node()->is_leaf) tape->note_leaf(p->node());
    n->requires_grad = true;
    n->backward = std::forward<Backward>(bw);
    tape->record(n);
  }
  return Var(std::move(n));
}

// Variant for ops with a runtime-sized parent list.
template <typename Backward>
Var make_op(Tensor value, const std::vector<Var>& parents, Backward&& bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (NoGradScope::enabled())
    for (const Var& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw Error("differentiable op evaluated without an active Tape");
    for (const Var& p : parents)
      if (p.requires_grad() && p.node()->is_leaf) tape->note_leaf(p.node());
    n->requires_grad = true;
    n->backward = std::forward<Backward>(bw);
    tape->record(n);
  }
  return Var(std::move(n));
}

namespace detail {

inline void require(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) throw ShapeError(op + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generic ops

inline Var add(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    a.accumulate(g);
    b.accumulate(g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return make_op(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    a.accumulate(g);
    if (Tensor* gb = b.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] -= g[k];
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::require(a.value().same_shape(b.value()), "hadamard", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  return make_op(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * b.value()[k];
    if (Tensor* gb = b.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k] * a.value()[k];
  });
}

inline Var scalarmul(double s, const Var& x) {
  Tensor out = x.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= s;
  return make_op(std::move(out), {&x}, [s, x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += s * g[k];
  });
}

// s is a rank-0 (or length-1) Var.
inline Var scalarmul(const Var& s, const Var& x) {
  if (s.value().size() != 1)
    throw ShapeError("scalarmul: scale must be scalar, got " + s.value().shape_string());
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= sv;
  return make_op(std::move(out), {&s, &x}, [s, x, sv](const Tensor& g) {
    if (Tensor* gs = s.grad_sink()) {
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * x.value()[k];
      (*gs)[0] += acc;
    }
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += sv * g[k];
  });
}

// A (m x n) times x (n) -> (m).
inline Var matvec(const Var& A, const Var& x) {
  const Tensor& a = A.value();
  const Tensor& xv = x.value();
  detail::require(a.rank() == 2 && xv.rank() == 1 && a.cols() == xv.size(), "matvec", a, xv);
  Tensor out = Tensor::vector(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * xv[j];
    out[i] = acc;
  }
  return make_op(std::move(out), {&A, &x}, [A, x](const Tensor& g) {
    const Tensor& a = A.value();
    const Tensor& xv = x.value();
    if (Tensor* gA = A.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i)
        if (g[i] != 0.0)
          for (std::size_t j = 0; j < a.cols(); ++j) (*gA)(i, j) += g[i] * xv[j];
    if (Tensor* gx = x.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) (*gx)[j] += g[i] * a(i, j);
  });
}

// x (m) times A (m x n) -> (n). Row-vector convention used by slot layers.
inline Var vecmat(const Var& x, const Var& A) {
  const Tensor& a = A.value();
  const Tensor& xv = x.value();
  detail::require(a.rank() == 2 && xv.rank() == 1 && a.rows() == xv.size(), "vecmat", xv, a);
  Tensor out = Tensor::vector(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (xv[i] == 0.0) continue;
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += xv[i] * a(i, j);
  }
  return make_op(std::move(out), {&x, &A}, [x, A](const Tensor& g) {
    const Tensor& a = A.value();
    const Tensor& xv = x.value();
    if (Tensor* gA = A.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i)
        if (xv[i] != 0.0)
          for (std::size_t j = 0; j < a.cols(); ++j) (*gA)(i, j) += xv[i] * g[j];
    if (Tensor* gx = x.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * g[j];
        (*gx)[i] += acc;
      }
  });
}

inline Var matmul(const Var& A, const Var& B) {
  const Tensor& a = A.value();
  const Tensor& b = B.value();
  detail::require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), "matmul", a, b);
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return make_op(std::move(out), {&A, &B}, [A, B](const Tensor& g) {
    const Tensor& a = A.value();
    const Tensor& b = B.value();
    if (Tensor* gA = A.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < b.cols(); ++j) acc += g(i, j) * b(k, j);
          (*gA)(i, k) += acc;
        }
    if (Tensor* gB = B.grad_sink())
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
          const double aik = a(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < b.cols(); ++j) (*gB)(k, j) += aik * g(i, j);
        }
  });
}

// a (m) outer b (n) -> (m x n).
inline Var outer(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.rank() == 1 && bv.rank() == 1, "outer", av, bv);
  Tensor out = Tensor::matrix(av.size(), bv.size());
  for (std::size_t i = 0; i < av.size(); ++i)
    for (std::size_t j = 0; j < bv.size(); ++j) out(i, j) = av[i] * bv[j];
  return make_op(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (Tensor* ga = a.grad_sink())
      for (std::size_t i = 0; i < av.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < bv.size(); ++j) acc += g(i, j) * bv[j];
        (*ga)[i] += acc;
      }
    if (Tensor* gb = b.grad_sink())
      for (std::size_t i = 0; i < av.size(); ++i)
        for (std::size_t j = 0; j < bv.size(); ++j) (*gb)[j] += g(i, j) * av[i];
  });
}

// Concatenation of vectors.
inline Var concat(const std::vector<Var>& parts) {
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 1) throw ShapeError("concat: expected vectors, got " + p.value().shape_string());
    n += p.value().size();
  }
  Tensor out = Tensor::vector(n);
  std::size_t at = 0;
  for (const Var& p : parts)
    for (double x : p.value().data()) out[at++] = x;
  return make_op(std::move(out), parts, [parts](const Tensor& g) {
    std::size_t at = 0;
    for (const Var& p : parts) {
      const std::size_t len = p.value().size();
      if (Tensor* gp = p.grad_sink())
        for (std::size_t k = 0; k < len; ++k) (*gp)[k] += g[at + k];
      at += len;
    }
  });
}

// x[begin, begin + length) of a vector.
inline Var slice(const Var& x, std::size_t begin, std::size_t length) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || begin + length > xv.size())
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") outside " + xv.shape_string());
  Tensor out = Tensor::vector(length);
  for (std::size_t k = 0; k < length; ++k) out[k] = xv[begin + k];
  return make_op(std::move(out), {&x}, [x, begin](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[begin + k] += g[k];
  });
}

// Same data, new shape. rows x cols must equal the size; cols == 0 gives a vector.
inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  const Tensor& xv = x.value();
  Tensor out = cols == 0 ? Tensor::vector(rows) : Tensor::matrix(rows, cols);
  if (out.size() != xv.size()) throw ShapeError("reshape " + xv.shape_string() + " to " + out.shape_string());
  std::copy(xv.data().begin(), xv.data().end(), out.data().begin());
  return make_op(std::move(out), {&x}, [x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += g[k];
  });
}

// Max-subtracted softmax over a vector.
inline Var softmax(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || xv.size() == 0) throw ShapeError("softmax: expected a vector, got " + xv.shape_string());
  double m = xv[0];
  for (double z : xv.data()) m = std::max(m, z);
  Tensor out = Tensor::vector(xv.size());
  double total = 0.0;
  for (std::size_t k = 0; k < xv.size(); ++k) total += (out[k] = std::exp(xv[k] - m));
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] /= total;
  Tensor y = out;
  return make_op(std::move(out), {&x}, [x, y = std::move(y)](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (gx == nullptr) return;
    double dot = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) dot += g[k] * y[k];
    for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += y[k] * (g[k] - dot);
  });
}

inline Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& z : out.data()) z = 1.0 / (1.0 + std::exp(-z));
  Tensor y = out;
  return make_op(std::move(out), {&x}, [x, y = std::move(y)](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += g[k] * y[k] * (1.0 - y[k]);
  });
}

inline Var tanh(const Var& x) {
  Tensor out = x.value();
  for (double& z : out.data()) z = std::tanh(z);
  Tensor y = out;
  return make_op(std::move(out), {&x}, [x, y = std::move(y)](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += g[k] * (1.0 - y[k] * y[k]);
  });
}

inline constexpr double kLogFloor = 1e-12;

// Elementwise log with the argument clamped at kLogFloor.
inline Var log(const Var& x) {
  Tensor out = x.value();
  for (double& z : out.data()) z = std::log(std::max(z, kLogFloor));
  return make_op(std::move(out), {&x}, [x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double z = x.value()[k];
        if (z > kLogFloor) (*gx)[k] += g[k] / z;
      }
  });
}

inline Var sum(const Var& x) {
  double acc = 0.0;
  for (double z : x.value().data()) acc += z;
  return make_op(Tensor::scalar(acc), {&x}, [x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink())
      for (double& z : gx->data()) z += g[0];
  });
}

// ---------------------------------------------------------------------------
// Trainable parameters

// Named leaves, kept in insertion order. Names are unique.
class ParameterStore {
 public:
  Var& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw Error("parameter '" + name + "' registered twice");
    index_[name] = params_.size();
    params_.push_back(Var::leaf(std::move(init), name));
    return params_.back();
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  std::vector<Var>& all() { return params_; }
  const std::vector<Var>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const Var& p : params_) n += p.value().size();
    return n;
  }

  void zero_grad() {
    for (Var& p : params_)
      if (!p.node()->grad.empty()) p.node()->grad.fill(0.0);
  }
  std::map<std::string, Tensor> gradients() const {
    std::map<std::string, Tensor> out;
    for (const Var& p : params_) out.emplace(p.name(), p.grad());
    return out;
  }

 private:
  std::vector<Var> params_;
  std::map<std::string, std::size_t> index_;
};

// Central finite-difference check of a scalar function of `params`.
// Returns max over entries of |analytic - numeric| / max(1, |numeric|);
// +inf when any evaluation is not finite.
inline double grad_check(const std::function<Var()>& f, std::vector<Var>& params, double eps = 1e-5) {
  for (Var& p : params) p.node()->grad = Tensor::zeros_like(p.value());
  {
    Tape tape;
    TapeScope scope(tape);
    Var loss = f();
    if (!std::isfinite(loss.value().item())) return std::numeric_limits<double>::infinity();
    tape.backward(loss);
    tape.reset(/*keep_leaf_grads=*/true);
  }
  double worst = 0.0;
  for (Var& p : params) {
    const Tensor analytic = p.grad();
    Tensor& v = p.mutable_value();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double saved = v[k];
      NoGradScope no_grad;
      v[k] = saved + eps;
      const double up = f().value().item();
      v[k] = saved - eps;
      const double down = f().value().item();
      v[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[k]))
        return std::numeric_limits<double>::infinity();
      worst = std::max(worst, std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  for (Var& p : params) p.node()->grad.fill(0.0);
  return worst;
}

}  // namespace d4

#endif  // D4_AUTODIFF_HPP_
