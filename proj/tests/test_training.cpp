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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "test_util.hpp"

namespace d4 {
namespace {

using testing::read_source;

MachineDims sketch_dims(Task t, const std::string& path, std::size_t length, std::size_t extra_values = 0) {
  const LoweredProgram probe = compile_source(read_source(path), {1024, 16});
  return task_dims(t, length, auto_value_size(t, length, probe) + extra_values);
}

std::vector<std::size_t> run_reference(Task t, const std::vector<std::size_t>& input) {
  const MachineDims dims = task_dims(t, input.size(), 64);
  const LoweredProgram prog = compile_source(reference_source(t), {dims.value, dims.heap});
  return run_discrete(initial_state(prog, dims, input), prog, dims, 100000).state.D;
}

TEST(Datasets, AdditionReference) {
  EXPECT_EQ(run_reference(Task::kAdd, {3, 2, 4, 8, 0, 2}), (std::vector<std::size_t>{0, 6, 2}));
  EXPECT_EQ(run_reference(Task::kAdd, {9, 0, 9, 1, 0, 2}), (std::vector<std::size_t>{1, 0, 0}));
  EXPECT_EQ(run_reference(Task::kAdd, {5, 4, 1, 1}), (std::vector<std::size_t>{1, 0}));
}

TEST(Datasets, SortReference) {
  EXPECT_EQ(run_reference(Task::kSort, {2, 4, 2, 7, 4}), (std::vector<std::size_t>{7, 4, 2, 2}));
}

TEST(Datasets, SortExamples) {
  const auto ex = gen_sort_dataset(5, 50, 4);
  ASSERT_EQ(ex.size(), 50u);
  for (const Example& e : ex) {
    ASSERT_EQ(e.input.size(), 6u);
    EXPECT_EQ(e.input.back(), 5u);
    EXPECT_TRUE(std::is_sorted(e.target.rbegin(), e.target.rend()));
    EXPECT_TRUE(std::is_permutation(e.target.begin(), e.target.end(), e.input.begin()));
    EXPECT_EQ(example_length(Task::kSort, e), 5u);
  }
}

TEST(Datasets, AdditionExamples) {
  const auto ex = gen_dataset(Task::kAdd, 6, 50, 4);
  for (const Example& e : ex) {
    ASSERT_EQ(e.input.size(), 8u);
    EXPECT_EQ(e.input.back(), 3u);
    ASSERT_EQ(e.target.size(), 4u);
    std::size_t a = 0, b = 0, r = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      a = 10 * a + e.input[2 * i];
      b = 10 * b + e.input[2 * i + 1];
    }
    for (std::size_t x : e.target) r = 10 * r + x;
    EXPECT_EQ(r, a + b + e.input[6]);
    EXPECT_EQ(e.aux.at("carry_in").get<std::size_t>(), e.input[6]);
    EXPECT_EQ(example_length(Task::kAdd, e), 6u);
  }
  EXPECT_THROW(gen_dataset(Task::kAdd, 5, 1, 1), Error);
}

TEST(Datasets, SeedDeterminism) {
  EXPECT_EQ(to_jsonl(gen_sort_dataset(4, 20, 9)), to_jsonl(gen_sort_dataset(4, 20, 9)));
  EXPECT_NE(to_jsonl(gen_sort_dataset(4, 20, 9)), to_jsonl(gen_sort_dataset(4, 20, 10)));
}

TEST(Datasets, JsonlRoundTrip) {
  const auto ex = gen_add_dataset(2, 10, 3);
  std::istringstream in(to_jsonl(ex));
  const auto back = from_jsonl(in);
  ASSERT_EQ(back.size(), ex.size());
  for (std::size_t k = 0; k < ex.size(); ++k) {
    EXPECT_EQ(back[k].input, ex[k].input);
    EXPECT_EQ(back[k].target, ex[k].target);
    EXPECT_EQ(back[k].aux, ex[k].aux);
  }
  std::istringstream bad("{\"input\": [1]}\n");
  EXPECT_THROW(from_jsonl(bad), Error);
}

TEST(Dims, TaskSizes) {
  EXPECT_EQ(task_dims(Task::kSort, 8, 20).stack, 24u);
  EXPECT_EQ(task_dims(Task::kAdd, 8, 20).stack, 16u);
  EXPECT_EQ(task_dims(Task::kAdd, 8, 20).heap, 4u);
}

TEST(Loss, ZeroOnExactTarget) {
  const MachineDims dims{8, 10, 4};
  DiscreteState s;
  s.D = {3, 1, 4};
  const ContinuousState cs = encode(s, dims, 0, 1);
  EXPECT_NEAR(stack_loss(cs.D, cs.d, {3, 1, 4}).value().item(), 0.0, 1e-12);
  EXPECT_GT(stack_loss(cs.D, cs.d, {3, 1, 5}).value().item(), 20.0);
}

TEST(Loss, UniformRows) {
  const Var D = Var::constant(Tensor::matrix(8, 10, 0.1));
  const Var d = Var::constant(Tensor::vector(8, 0.125));
  // Three data rows over 10 values plus the pointer over 8 positions.
  EXPECT_NEAR(stack_loss(D, d, {1, 2, 3}).value().item(), 3 * std::log(10.0) + std::log(8.0), 1e-12);
}

TEST(Loss, Gradient) {
  std::mt19937_64 rng(4);
  std::vector<Var> params = {Var::leaf(testing::random_row_simplex(6, 5, rng), "D"),
                             Var::leaf(testing::random_simplex(6, rng), "d")};
  EXPECT_LT(grad_check([&] { return stack_loss(params[0], params[1], {4, 0, 2}); }, params), 1e-4);
  EXPECT_THROW(stack_loss(params[0], params[1], {}), ShapeError);
}

TEST(Hamming, Counts) {
  const HammingCount h = hamming({1, 2, 3, 9}, {1, 2, 3, 4});
  EXPECT_EQ(h.correct, 3u);
  EXPECT_EQ(h.total, 4u);
  EXPECT_DOUBLE_EQ(h.percent(), 75.0);
  EXPECT_DOUBLE_EQ(hamming_accuracy({1}, {1, 2}), 50.0);
  EXPECT_THROW(HammingCount{}.percent(), Error);
}

TEST(Optimizer, ZeroGradientWithoutNoiseLeavesParameters) {
  OptimizerConfig cfg;
  cfg.noise_eta = 0;
  std::vector<Var> params = {Var::leaf(Tensor::vector({1.0, -2.0}), "w")};
  Optimizer opt(cfg, params);
  for (int k = 0; k < 5; ++k) opt.step({Tensor::vector(2)});
  EXPECT_EQ(params[0].value(), Tensor::vector({1.0, -2.0}));
}

TEST(Optimizer, ClipsAndReportsNorm) {
  OptimizerConfig cfg;
  cfg.noise_eta = 0;
  cfg.clip_norm = 1.0;
  cfg.learning_rate = 0.1;
  std::vector<Var> params = {Var::leaf(Tensor::vector({0.0, 0.0}), "w")};
  Optimizer opt(cfg, params);
  EXPECT_DOUBLE_EQ(opt.step({Tensor::vector({3.0, 4.0})}), 5.0);
  // First Adam step moves each coordinate by the learning rate.
  EXPECT_NEAR(params[0].value()[0], -0.1, 1e-6);
  EXPECT_NEAR(params[0].value()[1], -0.1, 1e-6);
  EXPECT_THROW(opt.step({}), Error);
}

TEST(Optimizer, NoiseIsSeeded) {
  OptimizerConfig cfg;
  auto after = [&](std::uint64_t seed) {
    cfg.seed = seed;
    std::vector<Var> params = {Var::leaf(Tensor::vector(3), "w")};
    Optimizer opt(cfg, params);
    for (int k = 0; k < 3; ++k) opt.step({Tensor::vector(3)});
    return params[0].value();
  };
  EXPECT_EQ(after(1), after(1));
  EXPECT_FALSE(after(1) == after(2));
}

TEST(Optimizer, ConfigValidation) {
  OptimizerConfig cfg;
  cfg.learning_rate = 0;
  cfg.batch_size = 0;
  try {
    cfg.validate();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("learning_rate"), std::string::npos);
    EXPECT_NE(msg.find("batch_size"), std::string::npos);
  }
}

TEST(Training, LossFallsOnAFixedBatch) {
  const auto train = gen_sort_dataset(2, 8, 21);
  Sketch sk = Sketch::load(read_source("sketches/sort_compare.d4"), sketch_dims(Task::kSort, "sketches/sort_compare.d4", 2), 2);
  const SizedRun sized = size_for(sk, Task::kSort, train, {true, true});
  OptimizerConfig cfg;
  cfg.noise_eta = 0;
  cfg.learning_rate = 0.01;
  Optimizer opt(cfg, sk.params.all());
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 10; ++step) {
    const double loss = batch_gradient(sk, sized, train);
    EXPECT_LT(loss, previous) << "step " << step;
    previous = loss;
    std::vector<Tensor> grads;
    for (const Var& p : sk.params.all()) grads.push_back(p.grad());
    opt.step(grads);
  }
}

TEST(Training, BatchGradientMatchesFiniteDifferences) {
  const auto train = gen_sort_dataset(2, 3, 5);
  Sketch sk = Sketch::load(read_source("sketches/sort_compare.d4"), sketch_dims(Task::kSort, "sketches/sort_compare.d4", 2), 2);
  const SizedRun sized = size_for(sk, Task::kSort, train, {true, true});
  auto f = [&] {
    Var total = Var::constant(Tensor::scalar(0.0));
    for (const Example& e : train) total = add(total, example_loss(sized, e));
    return total;
  };
  EXPECT_LT(grad_check(f, sk.params.all()), 1e-4);
}

TEST(Training, EvaluateCodedSketch) {
  const auto test = gen_sort_dataset(6, 20, 8);
  Sketch sk = Sketch::load(read_source("sketches/sort_permute_coded.d4"),
                           sketch_dims(Task::kSort, "sketches/sort_permute_coded.d4", 6), 1);
  EXPECT_DOUBLE_EQ(evaluate(sk, Task::kSort, test, {true, true}).percent(), 100.0);
  EXPECT_DOUBLE_EQ(evaluate(sk, Task::kSort, test, {true, true}, true).percent(), 100.0);
  EXPECT_THROW(evaluate(sk, Task::kSort, {}, {}), Error);
}

class Checkpoint : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "d4_checkpoint_test";
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(Checkpoint, RoundTripIsBitExact) {
  const MachineDims dims = sketch_dims(Task::kAdd, "sketches/add_choose.d4", 4);
  const std::string src = read_source("sketches/add_choose.d4");
  Sketch a = Sketch::load(src, dims, 7);
  a.params.all()[0].mutable_value()[0] = 1.0 / 3.0;
  save_checkpoint(dir, a, {{"task", "add"}});
  EXPECT_EQ(read_manifest(dir).at("task"), "add");
  Sketch b = Sketch::load(src, dims, 8);
  load_checkpoint(dir, b);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t k = 0; k < a.params.size(); ++k) EXPECT_EQ(a.params.all()[k].value(), b.params.all()[k].value());
}

TEST_F(Checkpoint, RejectsAnotherSketch) {
  const MachineDims dims = sketch_dims(Task::kAdd, "sketches/add_choose.d4", 4);
  Sketch a = Sketch::load(read_source("sketches/add_choose.d4"), dims, 7);
  save_checkpoint(dir, a);
  Sketch other = Sketch::load(read_source("sketches/add_manipulate.d4"), dims, 7);
  EXPECT_THROW(load_checkpoint(dir, other), Error);
  Sketch wider = Sketch::load(read_source("sketches/add_choose.d4"), sketch_dims(Task::kAdd, "sketches/add_choose.d4", 4, 10), 7);
  EXPECT_THROW(load_checkpoint(dir, wider), Error);
}

}  // namespace
}  // namespace d4
