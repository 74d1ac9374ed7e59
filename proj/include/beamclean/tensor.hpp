// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "beamclean/common.hpp"
#include "beamclean/rng.hpp"

namespace beamclean {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

/// Dense row-major double tensor. All model math runs in double; float32 only
/// appears in the checkpoint encoding.
class Tensor {
 public:
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) check(d >= 0, "Tensor: negative dim in ", shape_str(shape_));
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<int64_t>(data_.size()) == shape_numel(shape_), "Tensor: data size ",
          data_.size(), " does not match shape ", shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }
  static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal() * stddev;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }

  Tensor reshaped(Shape shape) const {
    check(shape_numel(shape) == numel(), "reshape: numel mismatch ", shape_str(shape_), " -> ",
          shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  /// Views the flat buffer as a rows x cols row-major matrix.
  MatMap mat(int64_t rows, int64_t cols) {
    check(rows * cols == numel(), "mat: ", rows, "x", cols, " view of ", numel(), " elements");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(int64_t rows, int64_t cols) const {
    check(rows * cols == numel(), "mat: ", rows, "x", cols, " view of ", numel(), " elements");
    return ConstMatMap(data_.data(), rows, cols);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  double dot(const Tensor& o) const {
    check(numel() == o.numel(), "dot: size mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < numel(); ++i) s += data_[static_cast<size_t>(i)] * o[i];
    return s;
  }

  Tensor& add_scaled(const Tensor& o, double alpha) {
    check(same_shape(o), "add_scaled: shape mismatch ", shape_str(shape_), " vs ",
          shape_str(o.shape_));
    for (int64_t i = 0; i < numel(); ++i) data_[static_cast<size_t>(i)] += alpha * o[i];
    return *this;
  }

  Tensor& fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
  }

  /// Rounds every element through float32; checkpoint I/O is then lossless.
  Tensor& round_f32() {
    for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
    return *this;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// C = A(m x k) * B(k x n), Eigen-backed.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul: bad shapes ",
        shape_str(a.shape()), " * ", shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  c.mat(a.dim(0), b.dim(1)).noalias() =
      a.mat(a.dim(0), a.dim(1)) * b.mat(b.dim(0), b.dim(1));
  return c;
}

}  // namespace beamclean
