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

#ifndef D4_TENSOR_HPP_
#define D4_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d4 {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Dense row-major tensor of rank 0, 1 or 2. Vectors have cols() == 1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double x) {
    Tensor t(0, 1, 1);
    t.data_[0] = x;
    return t;
  }
  static Tensor vector(std::size_t n, double fill = 0.0) {
    Tensor t(1, n, 1);
    std::fill(t.data_.begin(), t.data_.end(), fill);
    return t;
  }
  static Tensor vector(std::initializer_list<double> xs) {
    Tensor t(1, xs.size(), 1);
    std::copy(xs.begin(), xs.end(), t.data_.begin());
    return t;
  }
  static Tensor vector(std::span<const double> xs) {
    Tensor t(1, xs.size(), 1);
    std::copy(xs.begin(), xs.end(), t.data_.begin());
    return t;
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    Tensor t(2, rows, cols);
    std::fill(t.data_.begin(), t.data_.end(), fill);
    return t;
  }
  static Tensor one_hot(std::size_t n, std::size_t k) {
    Tensor t = vector(n);
    if (k >= n) throw ShapeError("one_hot index " + std::to_string(k) + " outside length " + std::to_string(n));
    t.data_[k] = 1.0;
    return t;
  }
  static Tensor zeros_like(const Tensor& other) {
    Tensor t(other.rank_, other.rows_, other.cols_);
    return t;
  }
  static Tensor identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  int rank() const { return rank_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
    return data_[0];
  }

  bool same_shape(const Tensor& o) const {
    return rank_ == o.rank_ && rows_ == o.rows_ && cols_ == o.cols_;
  }

  std::string shape_string() const {
    switch (rank_) {
      case 0: return "[]";
      case 1: return "[" + std::to_string(rows_) + "]";
      default: return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
    }
  }

  void fill(double x) { std::fill(data_.begin(), data_.end(), x); }

  Tensor& operator+=(const Tensor& o) {
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  Tensor(int rank, std::size_t rows, std::size_t cols)
      : rank_(rank), rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  int rank_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < xs.size(); ++k)
    if (xs[k] > xs[best]) best = k;
  return best;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace d4

#endif  // D4_TENSOR_HPP_
