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

#include <random>

#include "d4/executor.hpp"
#include "d4/sketch.hpp"
#include "test_util.hpp"

namespace d4 {
namespace {

using testing::probe;
using testing::random_row_simplex;
using testing::random_simplex;
using testing::read_source;

constexpr double kGradTol = 1e-4;

TEST(SlotParser, ChooseWithHiddenLayer) {
  const SlotSpec s = parse_slot(" observe D0 D-1 D-2 -> tanh -> linear 10 -> choose 0 1 ");
  ASSERT_EQ(s.encoder.size(), 2u);
  EXPECT_EQ(s.encoder[0].kind, EncoderStage::Kind::kObserve);
  EXPECT_EQ(s.encoder[0].refs.size(), 3u);
  EXPECT_EQ(s.encoder[0].refs[2].str(), "D-2");
  EXPECT_EQ(s.encoder[1].kind, EncoderStage::Kind::kLinear);
  EXPECT_EQ(s.encoder[1].units, 10u);
  EXPECT_EQ(s.encoder[1].activation, EncoderStage::Kind::kTanh);
  EXPECT_EQ(s.decoder.kind, Decoder::Kind::kChoose);
  ASSERT_EQ(s.decoder.words.size(), 2u);
  EXPECT_EQ(s.decoder.words[1].op, Op::kLit);
  EXPECT_EQ(s.decoder.words[1].arg, 1u);
}

TEST(SlotParser, TrailingActivationStaysAStage) {
  const SlotSpec s = parse_slot("observe D0 -> linear 4 -> sigmoid -> choose NOP DUP");
  ASSERT_EQ(s.encoder.size(), 3u);
  EXPECT_EQ(s.encoder[1].activation, EncoderStage::Kind::kLinear);
  EXPECT_EQ(s.encoder[2].kind, EncoderStage::Kind::kSigmoid);
}

TEST(SlotParser, ManipulateAndPermute) {
  const SlotSpec m = parse_slot("observe D0 R0 H2 -> manipulate D0 D-1");
  EXPECT_EQ(m.encoder[0].refs[1].where, CellRef::Where::kReturn);
  EXPECT_EQ(m.encoder[0].refs[2].where, CellRef::Where::kHeap);
  EXPECT_EQ(m.decoder.kind, Decoder::Kind::kManipulate);
  const SlotSpec p = parse_slot("static -> permute D-1 D0 R0");
  EXPECT_EQ(p.encoder[0].kind, EncoderStage::Kind::kStatic);
  EXPECT_EQ(p.decoder.refs.size(), 3u);
}

TEST(SlotParser, Errors) {
  EXPECT_THROW(parse_slot("observe D0"), ParseError);
  EXPECT_THROW(parse_slot("linear 3 -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> observe D1 -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe D1 -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe X0 -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> linear 0 -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> relu -> choose DUP"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> choose FOO"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> choose"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> permute D0 D0"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> permute D0 D-1 D-2 D-3 D-4"), ParseError);
  EXPECT_THROW(parse_slot("observe D0 -> shuffle D0"), ParseError);
}

TEST(SlotParser, ValidationAgainstDims) {
  const MachineDims dims{6, 10, 4};
  EXPECT_THROW(validate_slot(parse_slot("observe D-6 -> choose DUP"), dims), CompileError);
  EXPECT_THROW(validate_slot(parse_slot("observe H4 -> choose DUP"), dims), CompileError);
  EXPECT_THROW(validate_slot(parse_slot("observe D0 -> choose 10"), dims), CompileError);
  EXPECT_NO_THROW(validate_slot(parse_slot("observe D-5 H3 -> choose 9"), dims));
}

TEST(Permutations, LexicographicOrder) {
  const auto p = permutations(3);
  ASSERT_EQ(p.size(), 6u);
  EXPECT_EQ(p[0], (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(p[1], (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(p[3], (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(p[5], (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(permutations(4).size(), 24u);
}

TEST(SketchLoad, ExampleSketches) {
  const MachineDims dims{16, 64, 16};
  struct Case {
    const char* path;
    std::size_t slots;
    Decoder::Kind kind;
  };
  for (const Case& c : {Case{"sketches/sort_permute.d4", 1, Decoder::Kind::kPermute},
                        Case{"sketches/sort_compare.d4", 1, Decoder::Kind::kChoose},
                        Case{"sketches/add_manipulate.d4", 1, Decoder::Kind::kManipulate},
                        Case{"sketches/add_choose.d4", 2, Decoder::Kind::kChoose},
                        Case{"sketches/wap.d4", 4, Decoder::Kind::kPermute}}) {
    const Sketch sk = Sketch::load(read_source(c.path), dims, 1);
    ASSERT_EQ(sk.slots.size(), c.slots) << c.path;
    EXPECT_EQ(sk.slots[0].decoder.kind, c.kind) << c.path;
  }
}

TEST(SketchLoad, ParameterShapes) {
  const MachineDims dims{16, 64, 4};
  const Sketch sk = Sketch::load(read_source("sketches/sort_compare.d4"), dims, 1);
  // observe D0 D-1 feeds 2v inputs straight into a 2-way choice.
  EXPECT_EQ(sk.params.at("slot0.decoder.W").value().shape_string(), "[128x2]");
  EXPECT_EQ(sk.params.count_scalars(), 128u * 2 + 2);
  const Sketch add = Sketch::load(read_source("sketches/add_choose.d4"), dims, 1);
  EXPECT_EQ(add.params.at("slot0.stage1.W").value().shape_string(), "[192x10]");
  EXPECT_EQ(add.params.at("slot1.decoder.W").value().shape_string(), "[50x10]");
}

TEST(SketchLoad, SeedDeterminesParameters) {
  const MachineDims dims{16, 64, 4};
  const std::string src = read_source("sketches/sort_permute.d4");
  const Sketch a = Sketch::load(src, dims, 3), b = Sketch::load(src, dims, 3), c = Sketch::load(src, dims, 4);
  EXPECT_EQ(a.params.at("slot0.decoder.W").value(), b.params.at("slot0.decoder.W").value());
  EXPECT_FALSE(a.params.at("slot0.decoder.W").value() == c.params.at("slot0.decoder.W").value());
}

class Decoders : public ::testing::Test {
 protected:
  const MachineDims dims{6, 5, 3};
  DiscreteState state() const {
    DiscreteState s;
    s.D = {1, 4, 2};
    s.R = {3};
    s.H = {0, 1, 2};
    return s;
  }
  DataState encoded() const { return encode(state(), dims, 0, 1).data(); }
};

TEST_F(Decoders, ChooseOneHotIsTheWord) {
  const std::vector<ChoiceWord> words = {{Op::kSwap, 0, "SWAP"}, {Op::kLit, 3, "3"}, {Op::kNop, 0, "NOP"}};
  const DataState out = decode_choose(words, Var::constant(Tensor::one_hot(3, 0)), encoded(), dims);
  EXPECT_EQ(decode(ContinuousState::from(out, constant_one_hot(1, 0))).D, (std::vector<std::size_t>{1, 2, 4}));
  const DataState lit = decode_choose(words, Var::constant(Tensor::one_hot(3, 1)), encoded(), dims);
  EXPECT_EQ(decode(ContinuousState::from(lit, constant_one_hot(1, 0))).D, (std::vector<std::size_t>{1, 4, 2, 3}));
}

TEST_F(Decoders, ManipulateWritesCellsInPlace) {
  const std::vector<CellRef> refs = {{CellRef::Where::kData, 0}, {CellRef::Where::kReturn, 0}, {CellRef::Where::kHeap, 1}};
  const std::vector<Var> values = {Var::constant(Tensor::one_hot(5, 0)), Var::constant(Tensor::one_hot(5, 4)),
                                   Var::constant(Tensor::one_hot(5, 3))};
  const DiscreteState got = decode(ContinuousState::from(decode_manipulate(refs, values, encoded(), dims), constant_one_hot(1, 0)));
  EXPECT_EQ(got.D, (std::vector<std::size_t>{1, 4, 0}));
  EXPECT_EQ(got.R, (std::vector<std::size_t>{4}));
  EXPECT_EQ(got.H, (std::vector<std::size_t>{0, 3, 2}));
}

TEST_F(Decoders, PermuteOneHotAppliesThatPermutation) {
  const std::vector<CellRef> refs = {{CellRef::Where::kData, 1}, {CellRef::Where::kData, 0}, {CellRef::Where::kReturn, 0}};
  const auto perms = permutations(3);
  const std::vector<std::size_t> x = {4, 2, 3};  // D-1, D0, R0
  for (std::size_t k = 0; k < perms.size(); ++k) {
    const DataState out = decode_permute(refs, Var::constant(Tensor::one_hot(6, k)), encoded(), dims);
    const DiscreteState got = decode(ContinuousState::from(out, constant_one_hot(1, 0)));
    EXPECT_EQ(got.D, (std::vector<std::size_t>{1, x[perms[k][0]], x[perms[k][1]]})) << k;
    EXPECT_EQ(got.R, (std::vector<std::size_t>{x[perms[k][2]]})) << k;
  }
}

// Finite differences through each decoder and one full unrolled step.
class SlotGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
  const MachineDims dims{6, 5, 3};

  DataState soft_state() {
    return {Var::constant(random_row_simplex(dims.stack, dims.value, rng)), Var::constant(random_simplex(dims.stack, rng)),
            Var::constant(random_row_simplex(dims.stack, dims.value, rng)), Var::constant(random_simplex(dims.stack, rng)),
            Var::constant(random_row_simplex(dims.heap, dims.value, rng))};
  }

  static Var state_probe(const DataState& s) {
    return add(add(probe(s.D, 1), probe(s.d, 2)), add(add(probe(s.R, 3), probe(s.r, 4)), probe(s.H, 5)));
  }

  double check_slot(const std::string& body) {
    const SlotSpec spec = parse_slot(body);
    ParameterStore store;
    init_params(spec, dims, store, 5);
    // Nonzero biases and statics so every parameter moves the output.
    for (Var& p : store.all())
      for (double& z : p.mutable_value().data()) z += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const DataState s = soft_state();
    return grad_check([&] { return state_probe(apply_slot(spec, store, s, dims)); }, store.all());
  }
};

TEST_F(SlotGradient, Choose) {
  EXPECT_LT(check_slot("observe D0 D-1 -> tanh -> linear 4 -> choose NOP SWAP 1+ DROP 3"), kGradTol);
}

TEST_F(SlotGradient, Manipulate) {
  EXPECT_LT(check_slot("observe D0 R0 H1 -> sigmoid -> linear 3 -> manipulate D0 D-1 H2"), kGradTol);
}

TEST_F(SlotGradient, Permute) {
  EXPECT_LT(check_slot("observe D0 D-1 -> permute D-1 D0 R0"), kGradTol);
  EXPECT_LT(check_slot("static -> permute D0 D-1"), kGradTol);
}

TEST(UnrolledStep, GradientThroughExecutorStep) {
  // One step of the permute sketch from a state whose counter is split
  // between the slot and its neighbours, so slot, word and counter
  // gradients all flow.
  const MachineDims dims{10, 64, 4};
  Sketch sk = Sketch::load(read_source("sketches/sort_permute.d4"), dims, 3);
  const Executor ex = Executor::make(sk, {false, false});
  std::size_t slot_at = 0;
  while (sk.program.instructions[slot_at].op != Op::kSlot) ++slot_at;
  DiscreteState s;
  s.D = {3, 7};
  s.R = {5, 2};
  s.H.assign(dims.heap, 0);
  ContinuousState s0 = encode(s, dims, slot_at, ex.plan.size());
  Tensor c = Tensor::vector(ex.plan.size());
  c[slot_at] = 0.6;
  c[slot_at + 1] = 0.3;
  c[slot_at - 1] = 0.1;
  s0.c = Var::constant(c);
  // Soften the operands so the observed cells are not one-hot.
  std::mt19937_64 rng(2);
  s0.D = Var::constant(random_row_simplex(dims.stack, dims.value, rng));
  auto f = [&] {
    const ContinuousState s1 = ex.step(s0);
    return add(probe(s1.D, 21), add(probe(s1.R, 22), probe(s1.c, 23)));
  };
  EXPECT_LT(grad_check(f, sk.params.all()), kGradTol);
}

}  // namespace
}  // namespace d4
