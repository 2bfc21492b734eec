/*
 * Copyright 2026 the mrbc authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <utility>
#include <vector>

#include "mrbc/error.hpp"

namespace mrbc {

/// Dense n-dimensional array of 64-bit reals, row-major.
///
/// Tensors are plain values: copying copies the data, and a tensor handed to
/// an operation is never mutated. All arithmetic runs in double precision;
/// 32-bit storage exists only as a checkpoint/file encoding.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, double fill)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw DimensionError("Tensor: shape " + shape_string(shape_) + " wants " +
                           std::to_string(checked_size(shape_)) + " values, got " +
                           std::to_string(data_.size()));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i) { return data_.at(offset({i})); }
  double at(std::size_t i) const { return data_.at(offset({i})); }
  double& at(std::size_t i, std::size_t j) { return data_.at(offset({i, j})); }
  double at(std::size_t i, std::size_t j) const { return data_.at(offset({i, j})); }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_.at(offset({i, j, k})); }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_.at(offset({i, j, k}));
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_.at(offset({i, j, k, l}));
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_.at(offset({i, j, k, l}));
  }

  /// Row-major flat offset of a full multi-index.
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw DimensionError("Tensor::at: rank " + std::to_string(shape_.size()) + " tensor indexed with " +
                           std::to_string(idx.size()) + " indices");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis])
        throw DimensionError("Tensor::at: index " + std::to_string(i) + " out of bounds for axis " +
                             std::to_string(axis) + " of " + shape_string(shape_));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  /// Same data viewed under a different shape (sizes must agree).
  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size())
      throw_shape_mismatch("reshape", shape_, new_shape);
    return Tensor(std::move(new_shape), data_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("Tensor: zero extent in shape " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  /// Gradients are requested for this tensor when it joins a graph as a leaf.
  bool requires_grad = false;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void check_finite(const Tensor& t, const char* context) {
  if (!t.all_finite())
    throw NumericError(std::string(context) + ": non-finite value in tensor " + shape_string(t.shape()));
}

// ---------------------------------------------------------------------------
// Elementwise / reduction arithmetic. No broadcasting beyond scalar-tensor;
// shape adaptation is always explicit at call sites.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("add", a.shape(), b.shape());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("sub", a.shape(), b.shape());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("mul", a.shape(), b.shape());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

inline double sum(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("dot", a.shape(), b.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Dense matrix product. The inner kernel is Eigen's GEMM; a triple-loop
// reference lives in the test suite and the bench harness gates against it.
// ---------------------------------------------------------------------------

namespace detail {
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// C[m x n] = A[m x k] * B[k x n], raw row-major buffers.
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  ConstMatMap ma(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMatMap mb(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MatMap mc(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mc.noalias() = ma * mb;
}

/// C[m x n] = A^T[m x k] * B[k x n] where A is stored [k x m].
inline void gemm_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  ConstMatMap ma(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  ConstMatMap mb(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MatMap mc(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mc.noalias() = ma.transpose() * mb;
}

/// C[m x n] = A[m x k] * B^T[k x n] where B is stored [n x k].
inline void gemm_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  ConstMatMap ma(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMatMap mb(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  MatMap mc(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mc.noalias() = ma * mb.transpose();
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw_shape_mismatch("matmul", a.shape(), b.shape());
  if (a.extent(1) != b.extent(0)) throw_shape_mismatch("matmul", a.shape(), b.shape());
  Tensor out({a.extent(0), b.extent(1)});
  detail::gemm(a.data(), b.data(), out.data(), a.extent(0), a.extent(1), b.extent(1));
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: rank-2 tensor required, got " + shape_string(a.shape()));
  Tensor out({a.extent(1), a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i)
    for (std::size_t j = 0; j < a.extent(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

}  // namespace mrbc
