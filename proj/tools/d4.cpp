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

// d4: run, train, evaluate, trace and benchmark Forth sketches.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "d4/d4.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFault = 1;
constexpr int kUsage = 2;

class UsageError : public d4::Error {
 public:
  using d4::Error::Error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("D4_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("D4_SEED is not an integer: '") + env + "'");
    }
  }
  return 1;
}

d4::PlanOptions parse_plan(const std::string& s) {
  if (s == "naive") return {false, false};
  if (s == "collapse") return {true, false};
  if (s == "full") return {true, true};
  throw UsageError("unknown plan '" + s + "' (naive, collapse, full)");
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t k = 0; k < xs.size(); ++k) out += (k ? " " : "") + std::to_string(xs[k]);
  return out;
}

// Dims for running a program on concrete inputs. Values must hold every
// literal, input and, when the program calls, every return address.
d4::MachineDims auto_dims(const std::string& source, const std::vector<std::size_t>& input, std::size_t value,
                          std::size_t stack, std::size_t heap) {
  d4::MachineDims dims;
  dims.heap = heap;
  if (value == 0) {
    const d4::LoweredProgram probe = d4::compile_source(source, {1u << 20, heap});
    std::size_t v = 10;
    for (const auto& in : probe.instructions)
      if (in.op == d4::Op::kLit) v = std::max(v, in.arg + 1);
    for (std::size_t x : input) v = std::max(v, x + 1);
    if (probe.has_calls()) v = std::max(v, probe.size());
    v = std::max(v, heap);
    value = v;
  }
  dims.value = value;
  dims.stack = stack ? stack : std::max<std::size_t>(12, input.size() + 8);
  return dims;
}

struct MachineFlags {
  std::size_t value = 0;
  std::size_t stack = 0;
  std::size_t heap = 16;
  std::string plan = "full";
  std::size_t max_steps = 100000;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--value", value, "value size v (0: derive from the program)");
    app->add_option("--stack", stack, "stack rows l (0: inputs + 8, at least 12)");
    app->add_option("--heap", heap, "heap cells");
    app->add_option("--plan", plan, "naive, collapse or full")->check(CLI::IsMember({"naive", "collapse", "full"}));
    app->add_option("--max-steps", max_steps, "step budget");
    app->add_option("--checkpoint", checkpoint, "trained parameters for the program's slots");
    app->add_option("--seed", seed, "seed for untrained slot parameters (default: $D4_SEED or 1)");
  }
};

// Program plus parameters, sized for `input`.
d4::Sketch load_sketch(const std::string& path, const std::vector<std::size_t>& input, const MachineFlags& f) {
  const std::string source = read_file(path);
  std::size_t value = f.value, heap = f.heap;
  if (!f.checkpoint.empty()) {
    const json m = d4::read_manifest(f.checkpoint);
    value = m.at("value_size").get<std::size_t>();
    heap = m.at("heap_size").get<std::size_t>();
    if (f.value && f.value != value) throw UsageError("--value disagrees with the checkpoint's value size " + std::to_string(value));
  }
  d4::Sketch sk = d4::Sketch::load(source, auto_dims(source, input, value, f.stack, heap), resolve_seed(f.seed));
  if (!f.checkpoint.empty()) d4::load_checkpoint(f.checkpoint, sk);
  return sk;
}

// ---------------------------------------------------------------------------
// run

struct RunFlags {
  std::string program;
  std::vector<std::size_t> input;
  bool continuous = false;
  bool discretize = false;
  MachineFlags machine;
};

int cmd_run(const RunFlags& f) {
  const d4::Sketch sk = load_sketch(f.program, f.input, f.machine);
  if (!f.continuous) {
    if (!sk.slots.empty()) {
      const d4::Executor ex = d4::Executor::make(sk, parse_plan(f.machine.plan));
      const auto out = d4::run_hybrid(d4::initial_state(sk.program, sk.dims, f.input), ex, f.machine.max_steps);
      if (!out.halted) throw d4::StepTimeout(out.steps);
      std::cout << join(out.state.D) << '\n';
      return kOk;
    }
    const auto out = d4::run_discrete(d4::initial_state(sk.program, sk.dims, f.input), sk.program, sk.dims, f.machine.max_steps);
    std::cout << join(out.state.D) << '\n';
    return kOk;
  }
  d4::NoGradScope no_grad;
  const d4::Executor ex = d4::Executor::make(sk, parse_plan(f.machine.plan));
  d4::RunOptions opts;
  opts.max_steps = f.machine.max_steps;
  opts.discretize = f.discretize;
  const d4::RunOutput out = d4::run(ex.initial(f.input), ex, opts);
  if (!out.halted) std::cerr << "warning: counter not on HALT after " << out.steps << " steps\n";
  std::cout << join(d4::decode(out.state).D) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// trace

struct TraceFlags {
  RunFlags run;
  std::string out;
};

int cmd_trace(const TraceFlags& f) {
  const d4::Sketch sk = load_sketch(f.run.program, f.run.input, f.run.machine);
  std::ostringstream csv;
  if (!f.run.continuous && sk.slots.empty()) {
    csv << "step,c,line,word,D,R\n";
    auto row = [&](std::size_t step, std::size_t at, const d4::DiscreteState& s) {
      const auto& in = sk.program.instructions[at];
      csv << step << ',' << at << ',' << in.src.line << ',' << in.src.text << ',' << join(s.D) << ',' << join(s.R) << '\n';
    };
    d4::run_discrete(d4::initial_state(sk.program, sk.dims, f.run.input), sk.program, sk.dims, f.run.machine.max_steps, row);
  } else {
    d4::NoGradScope no_grad;
    const d4::Executor ex = d4::Executor::make(sk, parse_plan(f.run.machine.plan));
    d4::RunOptions opts;
    opts.discretize = f.run.discretize || !f.run.continuous;
    d4::ContinuousState s = ex.initial(f.run.input);
    csv << d4::state_csv_header() << '\n' << d4::state_csv_row(0, s) << '\n';
    for (std::size_t t = 1; t <= f.run.machine.max_steps && !ex.halted(s); ++t) {
      bool used_slot = false;
      s = ex.step(s, &used_slot);
      if (opts.discretize && (used_slot || !d4::is_one_hot(s.c.value()))) s = d4::discretize(s);
      csv << d4::state_csv_row(t, s) << '\n';
    }
  }
  if (f.out.empty())
    std::cout << csv.str();
  else
    write_file(f.out, csv.str());
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainSettings {
  std::string sketch;
  std::string task = "sort";
  std::size_t train_length = 2;
  std::size_t train_size = 0;  // 0: task default
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  std::vector<std::size_t> test_lengths;
  std::size_t value_size = 0;  // 0: derived from the longest test length
  std::size_t heap_size = 4;
  std::size_t max_steps = 0;
  std::string plan = "full";
  double learning_rate = 0;  // 0: task default
  std::size_t batch_size = 0;
  double clip_norm = 1.0;
  double noise_eta = 0.01;
  double noise_gamma = 0.55;
  std::size_t epochs = 100;
  std::size_t min_epochs = 1;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string train_data;
  std::string dev_data;
  bool continuous_eval = false;
};

json settings_json(const TrainSettings& s) {
  return {{"sketch", s.sketch},           {"task", s.task},
          {"train_length", s.train_length}, {"train_size", s.train_size},
          {"dev_size", s.dev_size},       {"test_size", s.test_size},
          {"test_lengths", s.test_lengths}, {"value_size", s.value_size},
          {"heap_size", s.heap_size},     {"max_steps", s.max_steps},
          {"plan", s.plan},               {"learning_rate", s.learning_rate},
          {"batch_size", s.batch_size},   {"clip_norm", s.clip_norm},
          {"noise_eta", s.noise_eta},     {"noise_gamma", s.noise_gamma},
          {"epochs", s.epochs},           {"min_epochs", s.min_epochs},
          {"seed", s.seed ? json(*s.seed) : json(nullptr)}, {"out", s.out},
          {"train_data", s.train_data},   {"dev_data", s.dev_data},
          {"continuous_eval", s.continuous_eval}};
}

// Fills `s` from a config document; collects every problem before failing.
void apply_config(const json& cfg, TrainSettings& s, std::vector<std::string>& problems) {
  if (!cfg.is_object()) {
    problems.push_back("config must be a JSON object");
    return;
  }
  const json known = settings_json(s);
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    if (!known.contains(it.key())) {
      problems.push_back("unknown key '" + it.key() + "'");
      continue;
    }
    try {
      const json& v = it.value();
      const std::string& k = it.key();
      if (k == "sketch") s.sketch = v.get<std::string>();
      else if (k == "task") s.task = v.get<std::string>();
      else if (k == "train_length") s.train_length = v.get<std::size_t>();
      else if (k == "train_size") s.train_size = v.get<std::size_t>();
      else if (k == "dev_size") s.dev_size = v.get<std::size_t>();
      else if (k == "test_size") s.test_size = v.get<std::size_t>();
      else if (k == "test_lengths") s.test_lengths = v.get<std::vector<std::size_t>>();
      else if (k == "value_size") s.value_size = v.get<std::size_t>();
      else if (k == "heap_size") s.heap_size = v.get<std::size_t>();
      else if (k == "max_steps") s.max_steps = v.get<std::size_t>();
      else if (k == "plan") s.plan = v.get<std::string>();
      else if (k == "learning_rate") s.learning_rate = v.get<double>();
      else if (k == "batch_size") s.batch_size = v.get<std::size_t>();
      else if (k == "clip_norm") s.clip_norm = v.get<double>();
      else if (k == "noise_eta") s.noise_eta = v.get<double>();
      else if (k == "noise_gamma") s.noise_gamma = v.get<double>();
      else if (k == "epochs") s.epochs = v.get<std::size_t>();
      else if (k == "min_epochs") s.min_epochs = v.get<std::size_t>();
      else if (k == "seed") s.seed = v.is_null() ? std::nullopt : std::optional<std::uint64_t>(v.get<std::uint64_t>());
      else if (k == "out") s.out = v.get<std::string>();
      else if (k == "train_data") s.train_data = v.get<std::string>();
      else if (k == "dev_data") s.dev_data = v.get<std::string>();
      else if (k == "continuous_eval") s.continuous_eval = v.get<bool>();
    } catch (const json::exception& e) {
      problems.push_back("key '" + it.key() + "': " + e.what());
    }
  }
}

void validate_settings(TrainSettings& s, std::vector<std::string>& problems) {
  if (s.sketch.empty())
    problems.push_back("no sketch given");
  else if (!fs::exists(s.sketch))
    problems.push_back("sketch file '" + s.sketch + "' does not exist");
  if (s.task != "sort" && s.task != "add") problems.push_back("task must be sort or add");
  if (s.plan != "naive" && s.plan != "collapse" && s.plan != "full") problems.push_back("plan must be naive, collapse or full");
  if (s.task == "add" && (s.train_length < 2 || s.train_length % 2)) problems.push_back("add train_length must be a positive even digit count");
  if (s.task == "sort" && s.train_length < 1) problems.push_back("sort train_length must be positive");
  if (s.heap_size < 2) problems.push_back("heap_size must be at least 2");
  for (const std::string* p : {&s.train_data, &s.dev_data})
    if (!p->empty() && !fs::exists(*p)) problems.push_back("data file '" + *p + "' does not exist");
  const bool sort = s.task == "sort";
  if (!s.train_size) s.train_size = sort ? 256 : 512;
  if (!s.dev_size) s.dev_size = sort ? 32 : 256;
  if (!s.test_size) s.test_size = sort ? 32 : 1024;
  if (s.test_lengths.empty()) s.test_lengths = {8, 64};
  if (s.learning_rate == 0) s.learning_rate = sort ? 1.0 : 0.05;
  if (!s.batch_size) s.batch_size = 16;
  if (s.learning_rate < 0) problems.push_back("learning_rate must be positive");
  if (!(s.clip_norm > 0)) problems.push_back("clip_norm must be positive");
  if (s.noise_eta < 0) problems.push_back("noise_eta must be non-negative");
  if (s.epochs < 1) problems.push_back("epochs must be at least 1");
  if (s.task == "add")
    for (std::size_t L : s.test_lengths)
      if (L < 2 || L % 2) problems.push_back("add test length " + std::to_string(L) + " is not a positive even digit count");
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

std::vector<d4::Example> load_or_generate(const std::string& path, d4::Task task, std::size_t length, std::size_t count,
                                          std::uint64_t seed) {
  if (!path.empty()) {
    std::ifstream in(path);
    auto ex = d4::from_jsonl(in);
    if (ex.empty()) throw UsageError("dataset '" + path + "' is empty");
    return ex;
  }
  return d4::gen_dataset(task, length, count, seed);
}

std::string grid(const std::vector<std::pair<std::size_t, double>>& cells) {
  std::ostringstream os;
  os << "length";
  for (const auto& c : cells) os << '\t' << c.first;
  os << "\naccuracy" << std::fixed << std::setprecision(2);
  for (const auto& c : cells) os << '\t' << c.second;
  os << '\n';
  return os.str();
}

int cmd_train(const std::string& config_path, TrainSettings flags, const std::vector<std::string>& overridden) {
  TrainSettings s;
  std::vector<std::string> problems;
  if (!config_path.empty()) {
    try {
      apply_config(json::parse(read_file(config_path)), s, problems);
    } catch (const json::parse_error& e) {
      problems.push_back(std::string("config is not valid JSON: ") + e.what());
    }
  }
  // Flags given on the command line win over the config file.
  const json f = settings_json(flags);
  json over = json::object();
  for (const auto& k : overridden) over[k] = f.at(k);
  apply_config(over, s, problems);
  validate_settings(s, problems);
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw UsageError(msg);
  }

  const std::uint64_t seed = resolve_seed(s.seed);
  const d4::Task task = d4::parse_task(s.task);
  const std::string source = read_file(s.sketch);
  const std::size_t longest = *std::max_element(s.test_lengths.begin(), s.test_lengths.end());
  const std::size_t value = s.value_size
      ? s.value_size
      : d4::auto_value_size(task, std::max(longest, s.train_length), d4::compile_source(source, {1u << 20, s.heap_size}));
  d4::MachineDims dims = d4::task_dims(task, s.train_length, value);
  dims.heap = s.heap_size;
  d4::Sketch sk = d4::Sketch::load(source, dims, seed);

  const auto train = load_or_generate(s.train_data, task, s.train_length, s.train_size, seed * 3 + 1);
  const auto dev = load_or_generate(s.dev_data, task, s.train_length, s.dev_size, seed * 3 + 2);

  const fs::path dir = fs::path(s.out) / (timestamp() + "-" + s.task + "-" + fs::path(s.sketch).stem().string());
  fs::create_directories(dir);
  json resolved = settings_json(s);
  resolved["seed"] = seed;
  resolved["value_size"] = value;
  write_file(dir / "config.json", resolved.dump(2) + "\n");
  write_file(dir / "train.jsonl", d4::to_jsonl(train));
  write_file(dir / "dev.jsonl", d4::to_jsonl(dev));
  write_file(dir / "program.txt", d4::dump_program(sk.program));
  write_file(dir / "plan.txt", d4::dump_plan(d4::build_plan(sk.program, parse_plan(s.plan))));

  d4::TrainConfig cfg;
  cfg.task = task;
  cfg.plan = parse_plan(s.plan);
  cfg.max_steps = s.max_steps;
  cfg.continuous_eval = s.continuous_eval;
  cfg.min_epochs = s.min_epochs;
  cfg.optimizer.learning_rate = s.learning_rate;
  cfg.optimizer.batch_size = s.batch_size;
  cfg.optimizer.clip_norm = s.clip_norm;
  cfg.optimizer.noise_eta = s.noise_eta;
  cfg.optimizer.noise_gamma = s.noise_gamma;
  cfg.optimizer.epochs = s.epochs;
  cfg.optimizer.seed = seed;
  cfg.log = [](const std::string& line) { std::cerr << line << '\n'; };
  const d4::TrainResult result = d4::train(sk, train, dev, cfg);
  write_file(dir / "metrics.csv", d4::metrics_csv(result.history));

  json manifest_extra = {{"task", s.task},  {"seed", seed},       {"sketch_path", s.sketch},
                         {"sketch_source", source}, {"plan", s.plan}, {"config", resolved},
                         {"best_epoch", result.best_epoch}, {"best_dev_accuracy", result.best_dev_accuracy}};
  d4::save_checkpoint(dir / "checkpoint", sk, manifest_extra);

  std::vector<std::pair<std::size_t, double>> cells;
  json results = json::object();
  for (std::size_t L : s.test_lengths) {
    const auto test = d4::gen_dataset(task, L, s.test_size, seed * 3 + 3 + L);
    const double acc = d4::evaluate(sk, task, test, cfg.plan, s.continuous_eval).percent();
    cells.emplace_back(L, acc);
    results[std::to_string(L)] = acc;
  }
  write_file(dir / "results.json", results.dump(2) + "\n");
  std::cout << "run directory: " << dir.string() << '\n' << grid(cells);
  return result.diverged ? kFault : kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalFlags {
  std::string checkpoint;
  std::vector<std::size_t> lengths{8, 64};
  std::size_t test_size = 0;
  std::string test_data;
  bool continuous = false;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalFlags& f) {
  if (!fs::exists(fs::path(f.checkpoint) / "manifest.json")) throw UsageError("no checkpoint at '" + f.checkpoint + "'");
  const json m = d4::read_manifest(f.checkpoint);
  const d4::Task task = d4::parse_task(m.at("task").get<std::string>());
  d4::MachineDims dims;
  dims.value = m.at("value_size").get<std::size_t>();
  dims.stack = m.at("stack_size").get<std::size_t>();
  dims.heap = m.at("heap_size").get<std::size_t>();
  d4::Sketch sk = d4::Sketch::load(m.at("sketch_source").get<std::string>(), dims, 0);
  d4::load_checkpoint(f.checkpoint, sk);
  const d4::PlanOptions plan = parse_plan(m.value("plan", std::string("full")));
  const std::uint64_t seed = resolve_seed(f.seed);

  std::vector<std::pair<std::size_t, double>> cells;
  if (!f.test_data.empty()) {
    std::ifstream in(f.test_data);
    if (!in) throw UsageError("cannot read '" + f.test_data + "'");
    const auto test = d4::from_jsonl(in);
    if (test.empty()) throw UsageError("test set '" + f.test_data + "' is empty");
    cells.emplace_back(d4::example_length(task, test.front()), d4::evaluate(sk, task, test, plan, f.continuous).percent());
  } else {
    const std::size_t n = f.test_size ? f.test_size : (task == d4::Task::kSort ? 32 : 1024);
    for (std::size_t L : f.lengths) {
      const auto test = d4::gen_dataset(task, L, n, seed * 3 + 3 + L);
      cells.emplace_back(L, d4::evaluate(sk, task, test, plan, f.continuous).percent());
    }
  }
  std::cout << grid(cells);
  return kOk;
}

// ---------------------------------------------------------------------------
// bench-opt

struct BenchFlags {
  std::string program;
  std::string task = "sort";
  std::vector<std::size_t> lengths{2, 3, 4};
  std::size_t repeats = 10;
  std::size_t value = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_bench(const BenchFlags& f) {
  const std::string source = read_file(f.program);
  const d4::Task task = d4::parse_task(f.task);
  const std::uint64_t seed = resolve_seed(f.seed);
  const std::size_t longest = *std::max_element(f.lengths.begin(), f.lengths.end());
  const std::size_t value = f.value ? f.value : d4::auto_value_size(task, longest, d4::compile_source(source, {1u << 20, 4}));
  const std::vector<std::pair<std::string, d4::PlanOptions>> variants = {
      {"naive", {false, false}}, {"collapse", {true, false}}, {"full", {true, true}}};

  std::ostringstream csv;
  csv << "length,variant,steps,median_ms,speedup\n";
  std::cout << "length\tvariant\tsteps\tmedian_ms\tspeedup\n";
  d4::NoGradScope no_grad;
  for (std::size_t L : f.lengths) {
    const auto ex = d4::gen_dataset(task, L, 1, seed + L);
    const d4::MachineDims dims = d4::task_dims(task, L, value);
    const d4::LoweredProgram prog = d4::compile_source(source, {dims.value, dims.heap});
    double naive_ms = 0;
    std::optional<d4::ContinuousState> reference;
    for (const auto& [name, opts] : variants) {
      const d4::Executor exec = d4::Executor::make(prog, dims, opts);
      d4::RunOptions ro;
      ro.max_steps = 1u << 20;
      std::vector<double> ms;
      d4::RunOutput out;
      for (std::size_t r = 0; r < f.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        out = d4::run(exec.initial(ex.front().input), exec, ro);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(ms.begin(), ms.end());
      const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
      if (!reference) {
        reference = out.state;
        naive_ms = median;
      } else if (d4::decode(out.state).D != d4::decode(*reference).D) {
        throw d4::Error("variant " + name + " disagrees with naive execution at length " + std::to_string(L));
      }
      std::ostringstream row;
      row << L << ',' << name << ',' << out.steps << ',' << std::setprecision(6) << median << ',' << naive_ms / median;
      csv << row.str() << '\n';
      std::string line = row.str();
      std::replace(line.begin(), line.end(), ',', '\t');
      std::cout << line << '\n';
    }
  }
  if (!f.out.empty()) write_file(f.out, csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d4: a differentiable Forth interpreter"};
  app.require_subcommand(1);

  RunFlags run;
  CLI::App* run_cmd = app.add_subcommand("run", "run a program and print the final data stack (bottom to top)");
  run_cmd->add_option("program", run.program, "source file")->required();
  run_cmd->add_option("--in", run.input, "initial data stack, bottom to top")->delimiter(',');
  run_cmd->add_flag("--continuous", run.continuous, "use the differentiable machine");
  run_cmd->add_flag("--discretize", run.discretize, "round the continuous state after each step");
  run.machine.attach(run_cmd);

  TraceFlags trace;
  CLI::App* trace_cmd = app.add_subcommand("trace", "write a per-step state trace as CSV");
  trace_cmd->add_option("program", trace.run.program, "source file")->required();
  trace_cmd->add_option("--in", trace.run.input, "initial data stack, bottom to top")->delimiter(',');
  trace_cmd->add_flag("--continuous", trace.run.continuous, "trace the differentiable machine");
  trace_cmd->add_flag("--discretize", trace.run.discretize, "round the continuous state after each step");
  trace_cmd->add_option("--out", trace.out, "CSV file (default: stdout)");
  trace.run.machine.attach(trace_cmd);

  std::string config_path;
  TrainSettings ts;
  std::uint64_t train_seed = 0;
  CLI::App* train_cmd = app.add_subcommand("train", "train a sketch on sorting or addition");
  train_cmd->add_option("--config", config_path, "JSON config; flags override its keys");
  train_cmd->add_option("--sketch", ts.sketch, "sketch source");
  train_cmd->add_option("--task", ts.task, "sort or add");
  train_cmd->add_option("--train-length", ts.train_length, "elements (sort) or input digits (add)");
  train_cmd->add_option("--train-size", ts.train_size);
  train_cmd->add_option("--dev-size", ts.dev_size);
  train_cmd->add_option("--test-size", ts.test_size);
  train_cmd->add_option("--test-lengths", ts.test_lengths)->delimiter(',');
  train_cmd->add_option("--value-size", ts.value_size);
  train_cmd->add_option("--heap-size", ts.heap_size);
  train_cmd->add_option("--max-steps", ts.max_steps, "T (0: derive from the reference program)");
  train_cmd->add_option("--plan", ts.plan, "naive, collapse or full");
  train_cmd->add_option("--learning-rate", ts.learning_rate);
  train_cmd->add_option("--batch-size", ts.batch_size);
  train_cmd->add_option("--clip-norm", ts.clip_norm);
  train_cmd->add_option("--noise-eta", ts.noise_eta);
  train_cmd->add_option("--noise-gamma", ts.noise_gamma);
  train_cmd->add_option("--epochs", ts.epochs);
  train_cmd->add_option("--min-epochs", ts.min_epochs);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--out", ts.out, "parent of the run directory");
  train_cmd->add_option("--train-data", ts.train_data, "JSON Lines dataset");
  train_cmd->add_option("--dev-data", ts.dev_data, "JSON Lines dataset");
  train_cmd->add_flag("--continuous-eval", ts.continuous_eval);

  EvalFlags ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with discretization");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--lengths", ev.lengths)->delimiter(',');
  eval_cmd->add_option("--test-size", ev.test_size);
  eval_cmd->add_option("--test-data", ev.test_data, "JSON Lines dataset");
  eval_cmd->add_flag("--continuous", ev.continuous, "full continuous run with rounding instead of the hybrid path");
  eval_cmd->add_option("--seed", ev.seed);

  BenchFlags bench;
  CLI::App* bench_cmd = app.add_subcommand("bench-opt", "time naive, collapsed and interpolated plans");
  bench_cmd->add_option("program", bench.program, "source file expecting task input on the stack")->required();
  bench_cmd->add_option("--task", bench.task, "input generator: sort or add");
  bench_cmd->add_option("--lengths", bench.lengths)->delimiter(',');
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--value", bench.value);
  bench_cmd->add_option("--out", bench.out, "CSV file");
  bench_cmd->add_option("--seed", bench.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run);
    if (trace_cmd->parsed()) return cmd_trace(trace);
    if (train_cmd->parsed()) {
      static const std::vector<std::pair<std::string, std::string>> flag_keys = {
          {"--sketch", "sketch"}, {"--task", "task"}, {"--train-length", "train_length"},
          {"--train-size", "train_size"}, {"--dev-size", "dev_size"}, {"--test-size", "test_size"},
          {"--test-lengths", "test_lengths"}, {"--value-size", "value_size"}, {"--heap-size", "heap_size"},
          {"--max-steps", "max_steps"}, {"--plan", "plan"}, {"--learning-rate", "learning_rate"},
          {"--batch-size", "batch_size"}, {"--clip-norm", "clip_norm"}, {"--noise-eta", "noise_eta"},
          {"--noise-gamma", "noise_gamma"}, {"--epochs", "epochs"}, {"--min-epochs", "min_epochs"},
          {"--seed", "seed"}, {"--out", "out"}, {"--train-data", "train_data"}, {"--dev-data", "dev_data"},
          {"--continuous-eval", "continuous_eval"}};
      std::vector<std::string> overridden;
      for (const auto& [flag, key] : flag_keys)
        if (train_cmd->count(flag)) overridden.push_back(key);
      if (train_cmd->count("--seed")) ts.seed = train_seed;
      return cmd_train(config_path, ts, overridden);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (bench_cmd->parsed()) return cmd_bench(bench);
  } catch (const UsageError& e) {
    std::cerr << "d4: " << e.what() << '\n';
    return kUsage;
  } catch (const d4::ParseError& e) {
    std::cerr << "d4: parse error: " << e.what() << '\n';
    return kFault;
  } catch (const d4::CompileError& e) {
    std::cerr << "d4: compile error: " << e.what() << '\n';
    return kFault;
  } catch (const d4::RuntimeFault& e) {
    std::cerr << "d4: runtime fault: " << e.what() << '\n';
    return kFault;
  } catch (const d4::StepTimeout& e) {
    std::cerr << "d4: " << e.what() << '\n';
    return kFault;
  } catch (const std::exception& e) {
    std::cerr << "d4: " << e.what() << '\n';
    return kFault;
  }
  return kUsage;
}
