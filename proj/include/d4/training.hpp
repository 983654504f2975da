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

// Datasets, loss, optimizer, training loop, evaluation and checkpoints for
// the sorting and addition tasks.

#ifndef D4_TRAINING_HPP_
#define D4_TRAINING_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "d4/autodiff.hpp"
#include "d4/executor.hpp"
#include "d4/forth.hpp"
#include "d4/machine.hpp"
#include "d4/sketch.hpp"

namespace d4 {

// ---------------------------------------------------------------------------
// Tasks

enum class Task { kSort, kAdd };

inline std::string task_name(Task t) { return t == Task::kSort ? "sort" : "add"; }
inline Task parse_task(const std::string& s) {
  if (s == "sort") return Task::kSort;
  if (s == "add") return Task::kAdd;
  throw Error("unknown task '" + s + "' (expected sort or add)");
}

// Reference programs; both expect their input preloaded on D.
inline constexpr const char* kSortReference = R"(: BUBBLE
    DUP IF >R
        OVER OVER < IF SWAP THEN
        R> SWAP >R 1- BUBBLE R>
    ELSE
        DROP
    THEN
;
: SORT 1- DUP 0 DO >R R@ BUBBLE R> LOOP DROP ;
SORT
)";

inline constexpr const char* kAddReference = R"(: ADD-DIGITS
  DUP 0 = IF
    DROP
  ELSE
    >R
    + + DUP 9 > IF 10 - 1 ELSE 0 THEN SWAP
    R> 1- SWAP >R
    ADD-DIGITS
    R>
  THEN
;
ADD-DIGITS
)";

inline const char* reference_source(Task t) { return t == Task::kSort ? kSortReference : kAddReference; }

struct Example {
  std::vector<std::size_t> input;   // initial D, bottom to top
  std::vector<std::size_t> target;  // expected final D, bottom to top
  nlohmann::json aux = nlohmann::json::object();
};

// Sequence length as reported in result tables: number of elements to sort,
// or number of input digits (twice the digits per operand) for addition.
inline std::size_t example_length(Task t, const Example& e) {
  return t == Task::kSort ? e.input.size() - 1 : e.input.size() - 2;
}

// Machine sizes for a task at a sequence length. The value size must be the
// same for training and testing because slot parameters depend on it.
inline MachineDims task_dims(Task t, std::size_t length, std::size_t value_size) {
  MachineDims d;
  d.value = value_size;
  d.heap = 4;
  d.stack = t == Task::kSort ? 2 * length + 8 : length + 8;
  return d;
}

// Smallest value size that can hold every literal, length and return
// address for test lengths up to max_length.
inline std::size_t auto_value_size(Task t, std::size_t max_length, const LoweredProgram& prog) {
  const std::size_t data = t == Task::kSort ? max_length + 1 : std::max<std::size_t>(max_length / 2 + 1, 20);
  return std::max({data, prog.size(), compile_source(reference_source(t), {1024, 16}).size()});
}

namespace detail {

inline void validate(Task t, const std::vector<Example>& ex) {
  const std::size_t longest = ex.empty() ? 0 : example_length(t, ex.front());
  const std::size_t v = std::max<std::size_t>(longest + 2, 64);
  const MachineDims dims = task_dims(t, longest, v);
  const LoweredProgram prog = compile_source(reference_source(t), {v, dims.heap});
  for (const Example& e : ex) {
    DiscreteState s = initial_state(prog, dims, e.input);
    const auto r = run_discrete(s, prog, dims, 1u << 24);
    if (r.state.D != e.target) throw Error("generated " + task_name(t) + " example disagrees with the reference program");
  }
}

}  // namespace detail

// Digits 0..9 followed by n; the target keeps the largest element at the
// bottom.
inline std::vector<Example> gen_sort_dataset(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (n < 1) throw Error("gen_sort_dataset: length must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> digit(0, 9);
  std::vector<Example> out;
  for (std::size_t k = 0; k < count; ++k) {
    Example e;
    for (std::size_t i = 0; i < n; ++i) e.input.push_back(digit(rng));
    e.target = e.input;
    std::sort(e.target.begin(), e.target.end(), std::greater<>());
    e.input.push_back(n);
    out.push_back(std::move(e));
  }
  detail::validate(Task::kSort, out);
  return out;
}

// a1 b1 ... an bn carry n with a1, b1 the most significant digits; the
// target is carry_out r1 ... rn.
inline std::vector<Example> gen_add_dataset(std::size_t digits, std::size_t count, std::uint64_t seed) {
  if (digits < 1) throw Error("gen_add_dataset: need at least one digit");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> digit(0, 9), bit(0, 1);
  std::vector<Example> out;
  for (std::size_t k = 0; k < count; ++k) {
    Example e;
    std::vector<std::size_t> a(digits), b(digits);
    for (std::size_t i = 0; i < digits; ++i) {
      a[i] = digit(rng);
      b[i] = digit(rng);
      e.input.push_back(a[i]);
      e.input.push_back(b[i]);
    }
    std::size_t carry = bit(rng);
    e.input.push_back(carry);
    e.input.push_back(digits);
    e.aux["carry_in"] = carry;
    std::vector<std::size_t> r(digits);
    for (std::size_t i = digits; i-- > 0;) {
      const std::size_t s = a[i] + b[i] + carry;
      r[i] = s % 10;
      carry = s / 10;
    }
    e.target.push_back(carry);
    e.target.insert(e.target.end(), r.begin(), r.end());
    out.push_back(std::move(e));
  }
  detail::validate(Task::kAdd, out);
  return out;
}

inline std::vector<Example> gen_dataset(Task t, std::size_t length, std::size_t count, std::uint64_t seed) {
  if (t == Task::kSort) return gen_sort_dataset(length, count, seed);
  if (length < 2 || length % 2) throw Error("addition length must be a positive even number of input digits");
  return gen_add_dataset(length / 2, count, seed);
}

// JSON Lines: {"input": [...], "target": [...], "aux": {...}}.
inline std::string to_jsonl(const std::vector<Example>& ex) {
  std::string out;
  for (const Example& e : ex) out += nlohmann::json{{"input", e.input}, {"target", e.target}, {"aux", e.aux}}.dump() + "\n";
  return out;
}

inline std::vector<Example> from_jsonl(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example e;
      e.input = j.at("input").get<std::vector<std::size_t>>();
      e.target = j.at("target").get<std::vector<std::size_t>>();
      if (j.contains("aux")) e.aux = j.at("aux");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& err) {
      throw Error("dataset line " + std::to_string(n) + ": " + err.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step budget

// Plan steps of a discrete run: each executed instruction that starts a
// transition is one step.
inline std::size_t plan_steps(const LoweredProgram& prog, const ExecutionPlan& plan, const MachineDims& dims,
                              const std::vector<std::size_t>& input) {
  std::size_t steps = 0;
  DiscreteState s = initial_state(prog, dims, input);
  run_discrete(s, prog, dims, 1u << 26, [&](std::size_t, std::size_t at, const DiscreteState&) {
    if (plan.plan_index[at] != ExecutionPlan::npos) ++steps;
  });
  return steps;
}

// T = ceil(1.25 x the reference program's plan steps on the longest input).
inline std::size_t step_budget(Task t, const std::vector<Example>& ex, const MachineDims& dims, const PlanOptions& opts) {
  const LoweredProgram prog = compile_source(reference_source(t), {dims.value, dims.heap});
  const ExecutionPlan plan = build_plan(prog, opts);
  std::size_t worst = 0;
  for (const Example& e : ex) worst = std::max(worst, plan_steps(prog, plan, dims, e.input));
  return static_cast<std::size_t>(std::ceil(1.25 * static_cast<double>(worst)));
}

// ---------------------------------------------------------------------------
// Loss and metrics

inline constexpr double kRowFloor = 1e-12;

// Cross-entropy of the final data stack against one-hot targets on the rows
// holding the expected output, plus the same for the pointer. Rows are
// clamped at kRowFloor and renormalized first.
inline Var stack_loss(const Var& D, const Var& d, const std::vector<std::size_t>& target) {
  const Tensor& m = D.value();
  const Tensor& p = d.value();
  const std::size_t n = target.size();
  if (n == 0 || n > m.rows()) throw ShapeError("stack_loss: target of " + std::to_string(n) + " rows for " + m.shape_string());
  const std::size_t top = n - 1;
  auto row_loss = [](std::span<const double> x, std::size_t y) {
    double s = 0.0;
    for (double z : x) s += z;
    return -std::log(std::max(x[y], kRowFloor)) + std::log(std::max(s, kRowFloor));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += row_loss(m.row(i), target[i]);
  total += row_loss(p.data(), top);
  auto row_grad = [](std::span<const double> x, std::size_t y, double g, std::span<double> out) {
    double s = 0.0;
    for (double z : x) s += z;
    const double ds = s > kRowFloor ? 1.0 / s : 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) out[k] += g * (ds - (k == y && x[k] > kRowFloor ? 1.0 / x[k] : 0.0));
  };
  return make_op(Tensor::scalar(total), {&D, &d}, [D, d, target, top, row_grad](const Tensor& g) {
    if (Tensor* gD = D.grad_sink())
      for (std::size_t i = 0; i < target.size(); ++i) row_grad(D.value().row(i), target[i], g[0], gD->row(i));
    if (Tensor* gd = d.grad_sink()) row_grad(d.value().data(), top, g[0], gd->data());
  });
}

// Matching cells over target cells, as counts.
struct HammingCount {
  std::size_t correct = 0;
  std::size_t total = 0;
  double percent() const {
    if (total == 0) throw Error("accuracy over an empty set");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
  HammingCount& operator+=(const HammingCount& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
};

inline HammingCount hamming(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& target) {
  HammingCount h;
  h.total = target.size();
  for (std::size_t i = 0; i < target.size(); ++i)
    if (i < predicted.size() && predicted[i] == target[i]) ++h.correct;
  return h;
}

inline double hamming_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& target) {
  return hamming(predicted, target).percent();
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  double noise_eta = 0.01;
  double noise_gamma = 0.55;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    std::vector<std::string> bad;
    if (!(learning_rate > 0)) bad.push_back("learning_rate must be positive");
    if (batch_size < 1) bad.push_back("batch_size must be at least 1");
    if (!(clip_norm > 0)) bad.push_back("clip_norm must be positive");
    if (noise_eta < 0) bad.push_back("noise_eta must be non-negative");
    if (epochs < 1) bad.push_back("epochs must be at least 1");
    if (!bad.empty()) {
      std::string msg = "invalid optimizer config:";
      for (const auto& b : bad) msg += "\n  " + b;
      throw Error(msg);
    }
  }
};

// Gradient noise, global-norm clipping, then Adam.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::vector<Var> params) : cfg_(cfg), params_(std::move(params)), rng_(cfg.seed ^ 0xadadadadULL) {
    for (const Var& p : params_) {
      m_.push_back(Tensor::zeros_like(p.value()));
      v_.push_back(Tensor::zeros_like(p.value()));
    }
  }

  // Applies `grads` (same order as the parameters). Returns the norm of the
  // gradient before clipping.
  double step(std::vector<Tensor> grads) {
    if (grads.size() != params_.size()) throw Error("optimizer: gradient count mismatch");
    const double var = cfg_.noise_eta / std::pow(1.0 + static_cast<double>(t_), cfg_.noise_gamma);
    if (var > 0) {
      std::normal_distribution<double> noise(0.0, std::sqrt(var));
      for (Tensor& g : grads)
        for (double& z : g.data()) z += noise(rng_);
    }
    double sq = 0.0;
    for (const Tensor& g : grads)
      for (double z : g.data()) sq += z * z;
    const double norm = std::sqrt(sq);
    const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& w = params_[k].mutable_value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = grads[k][i] * scale;
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        w[i] -= cfg_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.epsilon);
      }
    }
    return norm;
  }

  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  std::mt19937_64 rng_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training and evaluation

struct TrainConfig {
  Task task = Task::kSort;
  OptimizerConfig optimizer;
  PlanOptions plan{true, true};
  std::size_t max_steps = 0;    // T; 0 derives it from the reference program
  bool continuous_eval = false; // evaluate with the full continuous machine
  std::size_t min_epochs = 1;   // no early stop before this many epochs
  std::function<void(const std::string&)> log;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_dev_accuracy = -1.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& h) {
  std::ostringstream os;
  os << "epoch,trainLoss,devAccuracy,secondsElapsed\n";
  os << std::setprecision(10);
  for (const auto& m : h) os << m.epoch << ',' << m.train_loss << ',' << m.dev_accuracy << ',' << m.seconds << '\n';
  return os.str();
}

// A sketch re-sized for one sequence length. Slot parameters are shared with
// the trained sketch; only the stack depth changes.
struct SizedRun {
  MachineDims dims;
  Executor executor;
  std::size_t max_steps = 0;     // T for the continuous machine under this plan
  std::size_t hybrid_steps = 0;  // instruction budget for run_hybrid
};

inline SizedRun size_for(const Sketch& sketch, Task task, const std::vector<Example>& ex, const PlanOptions& plan,
                         std::size_t max_steps_override = 0) {
  if (ex.empty()) throw Error("empty example set");
  std::size_t longest = 0;
  for (const Example& e : ex) longest = std::max(longest, example_length(task, e));
  SizedRun r;
  r.dims = task_dims(task, longest, sketch.dims.value);
  r.dims.heap = sketch.dims.heap;
  r.executor = Executor::make(sketch.program, r.dims, plan);
  r.executor.slots = &sketch.slots;
  r.executor.params = &sketch.params;
  r.max_steps = max_steps_override ? max_steps_override : step_budget(task, ex, r.dims, plan);
  r.hybrid_steps = step_budget(task, ex, r.dims, {});
  return r;
}

// Loss of one example; records on the active tape when gradients are on.
inline Var example_loss(const SizedRun& sized, const Example& e, RunOutput* trace = nullptr) {
  RunOptions opts;
  opts.max_steps = sized.max_steps;
  opts.record_trace = trace != nullptr;
  RunOutput out = run(sized.executor.initial(e.input), sized.executor, opts);
  Var loss = stack_loss(out.state.D, out.state.d, e.target);
  if (trace) *trace = std::move(out);
  return loss;
}

// Final data stack under test-time discretization. The default path runs
// primitive words on the discrete machine and only slots on the continuous
// one; on a discrete fault it falls back to the full continuous run.
inline std::vector<std::size_t> predict(const SizedRun& sized, const Example& e, bool continuous = false) {
  NoGradScope no_grad;
  if (!continuous) {
    try {
      DiscreteState s = initial_state(*sized.executor.program, sized.dims, e.input);
      return run_hybrid(std::move(s), sized.executor, sized.hybrid_steps).state.D;
    } catch (const RuntimeFault&) {
    } catch (const ShapeError&) {
    }
  }
  RunOptions opts;
  opts.max_steps = sized.max_steps;
  opts.discretize = true;
  const RunOutput out = run(sized.executor.initial(e.input), sized.executor, opts);
  return decode(out.state).D;
}

inline HammingCount evaluate(const Sketch& sketch, Task task, const std::vector<Example>& ex, const PlanOptions& plan,
                             bool continuous = false) {
  const SizedRun sized = size_for(sketch, task, ex, plan);
  HammingCount h;
  for (const Example& e : ex) h += hamming(predict(sized, e, continuous), e.target);
  return h;
}

namespace detail {

inline std::vector<Tensor> snapshot(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const Var& p : store.all()) out.push_back(p.value());
  return out;
}

inline void restore(ParameterStore& store, const std::vector<Tensor>& values) {
  for (std::size_t k = 0; k < values.size(); ++k) store.all()[k].mutable_value() = values[k];
}

}  // namespace detail

// Mean loss over a batch; leaves the averaged gradient in each parameter.
inline double batch_gradient(Sketch& sketch, const SizedRun& sized, const std::vector<Example>& batch) {
  sketch.params.zero_grad();
  double total = 0.0;
  for (const Example& e : batch) {
    Tape tape;
    TapeScope scope(tape);
    Var loss = example_loss(sized, e);
    total += loss.value().item();
    if (!std::isfinite(total)) return total;
    Var scaled = scalarmul(1.0 / static_cast<double>(batch.size()), loss);
    tape.backward(scaled);
    tape.reset(/*keep_leaf_grads=*/true);
  }
  return total / static_cast<double>(batch.size());
}

// Epoch loop with best-dev checkpointing; stops early at 100% dev accuracy
// and aborts on a non-finite loss, restoring the best parameters.
inline TrainResult train(Sketch& sketch, const std::vector<Example>& train_set, const std::vector<Example>& dev_set,
                         const TrainConfig& cfg) {
  cfg.optimizer.validate();
  if (train_set.empty() || dev_set.empty()) throw Error("train: datasets must be non-empty");
  const auto t0 = std::chrono::steady_clock::now();
  const SizedRun sized = size_for(sketch, cfg.task, train_set, cfg.plan, cfg.max_steps);
  Optimizer opt(cfg.optimizer, sketch.params.all());
  std::mt19937_64 shuffle(cfg.optimizer.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<Tensor> best = detail::snapshot(sketch.params);
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.optimizer.batch_size) {
      std::vector<Example> batch;
      for (std::size_t k = at; k < std::min(order.size(), at + cfg.optimizer.batch_size); ++k)
        batch.push_back(train_set[order[k]]);
      const double loss = batch_gradient(sketch, sized, batch);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        detail::restore(sketch.params, best);
        if (cfg.log) cfg.log("non-finite loss in epoch " + std::to_string(epoch) + "; restored best parameters");
        return result;
      }
      std::vector<Tensor> grads;
      for (const Var& p : sketch.params.all()) grads.push_back(p.grad());
      opt.step(std::move(grads));
      loss_sum += loss;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.dev_accuracy = evaluate(sketch, cfg.task, dev_set, cfg.plan, cfg.continuous_eval).percent();
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (cfg.log) {
      std::ostringstream os;
      os << "epoch " << epoch << " loss " << m.train_loss << " dev " << m.dev_accuracy << "% (" << std::fixed
         << std::setprecision(1) << m.seconds << "s)";
      cfg.log(os.str());
    }
    if (m.dev_accuracy > result.best_dev_accuracy ||
        (m.dev_accuracy == result.best_dev_accuracy && m.train_loss <= best_loss)) {
      best_loss = m.train_loss;
      result.best_dev_accuracy = m.dev_accuracy;
      result.best_epoch = epoch;
      best = detail::snapshot(sketch.params);
    }
    if (m.dev_accuracy >= 100.0 && epoch >= cfg.min_epochs) break;
  }
  detail::restore(sketch.params, best);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: params.bin (little-endian float64, store order), params.json
// (name, shape, offset) and manifest.json (sketch hash, sizes, config).

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

namespace detail {

inline void put_f64(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  for (int k = 0; k < 8; ++k) os.put(static_cast<char>((bits >> (8 * k)) & 0xff));
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) {
    const int ch = is.get();
    if (ch == EOF) throw Error("params.bin truncated");
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * k);
  }
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Sketch& sketch, const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const Var& p : sketch.params.all()) {
    const Tensor& v = p.value();
    index.push_back({{"name", p.name()}, {"rows", v.rows()}, {"cols", v.cols()}, {"rank", v.rank()}, {"offset", offset}});
    for (double x : v.data()) detail::put_f64(bin, x);
    offset += v.size();
  }
  if (!bin) throw Error("failed writing " + (dir / "params.bin").string());
  std::ofstream(dir / "params.json") << index.dump(2) << '\n';
  nlohmann::json manifest = {{"sketch_hash", hex64(fnv1a(sketch.source))},
                             {"value_size", sketch.dims.value},
                             {"stack_size", sketch.dims.stack},
                             {"heap_size", sketch.dims.heap},
                             {"scalars", offset}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  return nlohmann::json::parse(in);
}

// Loads parameters into `sketch`, which must come from the same source and
// sizes the checkpoint was written with.
inline void load_checkpoint(const std::filesystem::path& dir, Sketch& sketch) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.at("sketch_hash").get<std::string>() != hex64(fnv1a(sketch.source)))
    throw Error("checkpoint was trained on a different sketch");
  if (manifest.at("value_size").get<std::size_t>() != sketch.dims.value)
    throw Error("checkpoint value size " + manifest.at("value_size").dump() + " does not match " + std::to_string(sketch.dims.value));
  std::ifstream idx(dir / "params.json");
  const nlohmann::json index = nlohmann::json::parse(idx);
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw Error("no params.bin in " + dir.string());
  if (index.size() != sketch.params.size()) throw Error("checkpoint parameter count mismatch");
  for (std::size_t k = 0; k < index.size(); ++k) {
    Var p = sketch.params.all()[k];
    const auto& e = index[k];
    if (e.at("name").get<std::string>() != p.name()) throw Error("checkpoint parameter order mismatch at " + p.name());
    Tensor& v = p.mutable_value();
    if (e.at("rows").get<std::size_t>() != v.rows() || e.at("cols").get<std::size_t>() != v.cols())
      throw ShapeError("checkpoint shape mismatch for " + p.name());
    for (double& x : v.data()) x = detail::get_f64(bin);
  }
}

}  // namespace d4

#endif  // D4_TRAINING_HPP_
