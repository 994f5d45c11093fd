// Copyright 2026 The GDA Toolkit Authors.
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "gda/error.hpp"

namespace gda {

/// Storage precision. The numeric value is the byte width, which is also
/// the tag written into checkpoints.
enum class Precision : std::uint8_t { F32 = 4, F64 = 8 };

template <typename T>
inline constexpr Precision precision_of = std::is_same_v<T, float> ? Precision::F32 : Precision::F64;

const char* precision_name(Precision p) noexcept;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_product(const Shape& shape) noexcept;

/// Dense row-major array. A default-constructed tensor is "unset" (rank 0,
/// no data); every constructed tensor has rank >= 1 and positive extents.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  using value_type = T;
  static constexpr Precision precision = precision_of<T>;

  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape) : shape_(validated(std::move(shape))), data_(shape_product(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(validated(std::move(shape))), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_string(shape_));
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Extent of the last axis, and the number of rows above it.
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) noexcept { std::fill(data_.begin(), data_.end(), value); }

  /// Bitwise-meaningful equality: same shape and identical values.
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static Shape validated(Shape shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_string(shape));
    return shape;
  }

  Shape shape_;
  std::vector<T> data_;
};

enum class Transpose : bool { No = false, Yes = true };

/// C (m x n) = op(A) (m x k) * op(B) (k x n) on raw row-major buffers with
/// leading dimensions. When `accumulate` is set the product is added to C
/// after it is formed; each output element is summed over k in ascending
/// order starting from zero, matching a naive triple loop bit for bit.
template <typename T>
void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// a (M x K) * b (K x N).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a (M x K) * b^T where b is (N x K).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// a^T * b where a is (K x M) and b is (K x N).
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

enum class Mask { None, Causal };

/// Row-wise softmax with per-row max subtraction. Under a causal mask
/// entries with column > row are exactly zero.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores, Mask mask = Mask::None);

/// In-place softmax of one row whose first `visible` entries participate;
/// the remainder is zeroed.
template <typename T>
void softmax_row_inplace(std::span<T> row, std::size_t visible);

inline constexpr double kDefaultRmsEps = 1e-6;

/// y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, double eps = kDefaultRmsEps);

/// Precomputed rotary angles for one head width and base.
class RopeTable {
 public:
  RopeTable(std::size_t d_head, double theta, std::size_t max_positions);

  std::size_t d_head() const noexcept { return d_head_; }
  double theta() const noexcept { return theta_; }
  std::size_t max_positions() const noexcept { return max_positions_; }

  /// Rotates the d_head values at `x` for position `pos`; `inverse` applies
  /// the transposed rotation (used by the backward pass).
  template <typename T>
  void rotate(T* x, std::size_t pos, bool inverse = false) const;

 private:
  std::size_t d_head_;
  double theta_;
  std::size_t max_positions_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

/// Rotates consecutive pairs (x[2k], x[2k+1]) of every row of x (N x d_head)
/// by positions[row] * theta^(-2k/d_head).
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::size_t> positions, double theta);

/// Throws NonFiniteError naming `stage` if any value is NaN or Inf.
template <typename T>
void require_finite(std::span<const T> values, const char* stage);

#ifndef NDEBUG
#define GDA_DEBUG_CHECK_FINITE(values, stage) ::gda::require_finite(values, stage)
#else
#define GDA_DEBUG_CHECK_FINITE(values, stage) ((void)0)
#endif

// Elementwise helpers used by the model code.
template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src);

template <typename T>
void scale_inplace(Tensor<T>& dst, T factor);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace gda
