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
#include <random>

#include "d4/autodiff.hpp"
#include "test_util.hpp"

namespace d4 {
namespace {

using testing::probe;
using testing::random_simplex;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

TEST(Tensor, OneHotAndArgmax) {
  Tensor t = Tensor::one_hot(5, 3);
  EXPECT_EQ(argmax(t.data()), 3u);
  EXPECT_EQ(t.rank(), 1);
  Tensor ties = Tensor::vector({0.5, 0.5});
  EXPECT_EQ(argmax(ties.data()), 0u);
  EXPECT_THROW(Tensor::one_hot(3, 3), ShapeError);
}

TEST(Tensor, RowSpansAreViews) {
  Tensor m = Tensor::matrix(2, 3);
  m.row(1)[2] = 4.0;
  EXPECT_EQ(m(1, 2), 4.0);
  EXPECT_EQ(m.shape_string(), "[2x3]");
}

TEST(Autodiff, AddAndHadamardBackward) {
  Tape tape;
  TapeScope scope(tape);
  Var a = Var::leaf(Tensor::vector({1, 2, 3}));
  Var b = Var::leaf(Tensor::vector({4, 5, 6}));
  Var loss = sum(hadamard(add(a, b), b));
  tape.backward(loss);
  // d/da = b; d/db = a + 2b
  EXPECT_EQ(a.grad(), Tensor::vector({4, 5, 6}));
  EXPECT_EQ(b.grad(), Tensor::vector({9, 12, 15}));
}

TEST(Autodiff, ShapeMismatchThrows) {
  Var a = Var::constant(Tensor::vector(3));
  Var b = Var::constant(Tensor::vector(4));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matvec(Var::constant(Tensor::matrix(2, 3)), b), ShapeError);
}

TEST(Autodiff, BackwardTwiceIsAnError) {
  Tape tape;
  TapeScope scope(tape);
  Var a = Var::leaf(Tensor::vector({1, 2}));
  Var loss = sum(a);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), Error);
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tape tape;
  TapeScope scope(tape);
  Var a = Var::leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(scalarmul(2.0, a)), ShapeError);
}

TEST(Autodiff, SoftmaxIsStable) {
  Var x = Var::constant(Tensor::vector({1000.0, 1000.0, -1000.0}));
  const Tensor y = softmax(x).value();
  EXPECT_NEAR(y[0], 0.5, 1e-12);
  EXPECT_NEAR(y[2], 0.0, 1e-12);
}

TEST(Autodiff, LogIsClamped) {
  Var x = Var::constant(Tensor::vector({0.0}));
  EXPECT_NEAR(log(x).value()[0], std::log(kLogFloor), 1e-9);
}

TEST(Autodiff, NoGradScopeRecordsNothing) {
  Tape tape;
  TapeScope scope(tape);
  Var a = Var::leaf(Tensor::vector({1, 2}));
  {
    NoGradScope off;
    (void)sum(hadamard(a, a));
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, ResetKeepsLeafGradientsForAccumulation) {
  Var a = Var::leaf(Tensor::vector({1, 2}));
  for (int k = 0; k < 3; ++k) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(a));
    tape.reset(true);
  }
  EXPECT_EQ(a.grad(), Tensor::vector({3, 3}));
}

// Finite differences over every operation.
class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  double check(const std::function<Var()>& f, std::vector<Var> params) { return grad_check(f, params); }
};

TEST_F(OpGradient, Elementwise) {
  Var a = Var::leaf(random_tensor(4, 3, rng)), b = Var::leaf(random_tensor(4, 3, rng));
  EXPECT_LT(check([&] { return probe(add(a, b), 1); }, {a, b}), kGradTol);
  EXPECT_LT(check([&] { return probe(sub(a, b), 2); }, {a, b}), kGradTol);
  EXPECT_LT(check([&] { return probe(hadamard(a, b), 3); }, {a, b}), kGradTol);
  EXPECT_LT(check([&] { return probe(scalarmul(1.7, a), 4); }, {a}), kGradTol);
  Var s = Var::leaf(Tensor::scalar(0.3));
  EXPECT_LT(check([&] { return probe(scalarmul(s, a), 5); }, {s, a}), kGradTol);
}

TEST_F(OpGradient, Products) {
  Var A = Var::leaf(random_tensor(3, 4, rng)), B = Var::leaf(random_tensor(4, 2, rng));
  Var x = Var::leaf(random_tensor(4, 0, rng)), y = Var::leaf(random_tensor(3, 0, rng));
  EXPECT_LT(check([&] { return probe(matvec(A, x), 6); }, {A, x}), kGradTol);
  EXPECT_LT(check([&] { return probe(vecmat(y, A), 7); }, {y, A}), kGradTol);
  EXPECT_LT(check([&] { return probe(matmul(A, B), 8); }, {A, B}), kGradTol);
  EXPECT_LT(check([&] { return probe(outer(y, x), 9); }, {y, x}), kGradTol);
}

TEST_F(OpGradient, Structural) {
  Var x = Var::leaf(random_tensor(4, 0, rng)), y = Var::leaf(random_tensor(3, 0, rng));
  EXPECT_LT(check([&] { return probe(concat({x, y}), 10); }, {x, y}), kGradTol);
  EXPECT_LT(check([&] { return probe(slice(x, 1, 2), 11); }, {x}), kGradTol);
  Var z = Var::leaf(random_tensor(6, 0, rng));
  EXPECT_LT(check([&] { return probe(reshape(z, 2, 3), 12); }, {z}), kGradTol);
  EXPECT_LT(check([&] { return sum(x); }, {x}), kGradTol);
}

TEST_F(OpGradient, Nonlinear) {
  Var x = Var::leaf(random_tensor(5, 0, rng, -2.0, 2.0));
  EXPECT_LT(check([&] { return probe(softmax(x), 13); }, {x}), kGradTol);
  EXPECT_LT(check([&] { return probe(sigmoid(x), 14); }, {x}), kGradTol);
  EXPECT_LT(check([&] { return probe(tanh(x), 15); }, {x}), kGradTol);
  Var p = Var::leaf(random_simplex(5, rng));
  EXPECT_LT(check([&] { return probe(log(p), 16); }, {p}), kGradTol);
}

TEST(ParameterStore, NamesAreUnique) {
  ParameterStore store;
  store.add("w", Tensor::vector(2));
  EXPECT_TRUE(store.contains("w"));
  EXPECT_THROW(store.add("w", Tensor::vector(2)), Error);
  EXPECT_THROW(store.at("missing"), Error);
  EXPECT_EQ(store.count_scalars(), 2u);
}

}  // namespace
}  // namespace d4
