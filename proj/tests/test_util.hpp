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

#ifndef D4_TESTS_TEST_UTIL_HPP_
#define D4_TESTS_TEST_UTIL_HPP_

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "d4/d4.hpp"

namespace d4::testing {

inline std::string source_path(const std::string& rel) { return std::string(D4_SOURCE_DIR) + "/" + rel; }

inline std::string read_source(const std::string& rel) {
  std::ifstream in(source_path(rel));
  if (!in) throw Error("missing test input " + rel);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = cols == 0 ? Tensor::vector(rows) : Tensor::matrix(rows, cols);
  for (double& x : t.data()) x = u(rng);
  return t;
}

// Strictly positive distribution.
inline Tensor random_simplex(std::size_t n, std::mt19937_64& rng) {
  Tensor t = random_tensor(n, 0, rng, 0.05, 1.0);
  double s = 0;
  for (double x : t.data()) s += x;
  for (double& x : t.data()) x /= s;
  return t;
}

// Every row a positive distribution.
inline Tensor random_row_simplex(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    Tensor row = random_simplex(cols, rng);
    std::copy(row.data().begin(), row.data().end(), t.row(r).begin());
  }
  return t;
}

// A random weighted sum of every entry: reduces any output to a scalar with
// nontrivial upstream gradient.
inline Var probe(const Var& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor& v = x.value();
  if (v.rank() == 0) return scalarmul(0.7, x);
  const Tensor w = random_tensor(v.rows(), v.rank() == 2 ? v.cols() : 0, rng);
  return sum(hadamard(x, Var::constant(w)));
}

}  // namespace d4::testing

#endif  // D4_TESTS_TEST_UTIL_HPP_
