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

#include "gda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace gda {

const char* precision_name(Precision p) noexcept { return p == Precision::F32 ? "f32" : "f64"; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& shape) noexcept {
  std::size_t n = shape.empty() ? 0 : 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

namespace {

// Register tile: kMr rows by 256 bytes of columns over packed operands.
constexpr std::size_t kMr = 4;
template <typename T>
constexpr std::size_t kNr = 256 / sizeof(T);

template <typename T>
void pack_a(Transpose ta, std::size_t m, std::size_t k, const T* a, std::size_t lda, std::vector<T>& out) {
  const std::size_t blocks = (m + kMr - 1) / kMr;
  out.assign(blocks * kMr * k, T(0));
  for (std::size_t ib = 0; ib < blocks; ++ib) {
    T* dst = out.data() + ib * kMr * k;
    for (std::size_t r = 0; r < kMr; ++r) {
      const std::size_t i = ib * kMr + r;
      if (i >= m) break;
      if (ta == Transpose::No) {
        const T* src = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) dst[p * kMr + r] = src[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) dst[p * kMr + r] = a[p * lda + i];
      }
    }
  }
}

template <typename T>
void pack_b(Transpose tb, std::size_t k, std::size_t n, const T* b, std::size_t ldb, std::vector<T>& out) {
  constexpr std::size_t nr = kNr<T>;
  const std::size_t panels = (n + nr - 1) / nr;
  out.assign(panels * nr * k, T(0));
  for (std::size_t jp = 0; jp < panels; ++jp) {
    T* dst = out.data() + jp * nr * k;
    const std::size_t j0 = jp * nr;
    const std::size_t width = std::min(nr, n - j0);
    if (tb == Transpose::No) {
      for (std::size_t p = 0; p < k; ++p) {
        const T* src = b + p * ldb + j0;
        std::copy(src, src + width, dst + p * nr);
      }
    } else {
      for (std::size_t c = 0; c < width; ++c) {
        const T* src = b + (j0 + c) * ldb;
        for (std::size_t p = 0; p < k; ++p) dst[p * nr + c] = src[p];
      }
    }
  }
}

template <typename T>
void micro_kernel(std::size_t k, const T* __restrict ap, const T* __restrict bp, T (&acc)[kMr][kNr<T>]) {
  constexpr std::size_t nr = kNr<T>;
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t c = 0; c < nr; ++c) acc[r][c] = T(0);
  for (std::size_t p = 0; p < k; ++p, ap += kMr, bp += nr) {
    for (std::size_t r = 0; r < kMr; ++r) {
      const T av = ap[r];
      for (std::size_t c = 0; c < nr; ++c) acc[r][c] += av * bp[c];
    }
  }
}

}  // namespace

template <typename T>
void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
    return;
  }
  constexpr std::size_t nr = kNr<T>;
  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;
  pack_a(ta, m, k, a, lda, apack);
  pack_b(tb, k, n, b, ldb, bpack);

  alignas(64) T acc[kMr][nr];
  const std::size_t panels = (n + nr - 1) / nr;
  const std::size_t blocks = (m + kMr - 1) / kMr;
  for (std::size_t jp = 0; jp < panels; ++jp) {
    const std::size_t j0 = jp * nr;
    const std::size_t width = std::min(nr, n - j0);
    const T* bp = bpack.data() + jp * nr * k;
    for (std::size_t ib = 0; ib < blocks; ++ib) {
      const std::size_t i0 = ib * kMr;
      const std::size_t height = std::min(kMr, m - i0);
      micro_kernel<T>(k, apack.data() + ib * kMr * k, bp, acc);
      for (std::size_t r = 0; r < height; ++r) {
        T* dst = c + (i0 + r) * ldc + j0;
        if (accumulate) {
          for (std::size_t col = 0; col < width; ++col) dst[col] += acc[r][col];
        } else {
          for (std::size_t col = 0; col < width; ++col) dst[col] = acc[r][col];
        }
      }
    }
  }
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor<T> out({a.dim(0), b.dim(1)});
  gemm(Transpose::No, Transpose::No, a.dim(0), b.dim(1), a.dim(1), a.data(), a.dim(1), b.data(), b.dim(1), out.data(),
       b.dim(1), false);
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  if (a.dim(1) != b.dim(1)) shape_mismatch("matmul_nt", a.shape(), b.shape());
  Tensor<T> out({a.dim(0), b.dim(0)});
  gemm(Transpose::No, Transpose::Yes, a.dim(0), b.dim(0), a.dim(1), a.data(), a.dim(1), b.data(), b.dim(1),
       out.data(), b.dim(0), false);
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  if (a.dim(0) != b.dim(0)) shape_mismatch("matmul_tn", a.shape(), b.shape());
  Tensor<T> out({a.dim(1), b.dim(1)});
  gemm(Transpose::Yes, Transpose::No, a.dim(1), b.dim(1), a.dim(0), a.data(), a.dim(1), b.data(), b.dim(1),
       out.data(), b.dim(1), false);
  return out;
}

template <typename T>
void softmax_row_inplace(std::span<T> row, std::size_t visible) {
  if (visible == 0 || visible > row.size()) throw IndexError("softmax row has no visible entries");
  T peak = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < visible; ++j) peak = std::max(peak, row[j]);
  if (!(peak > -std::numeric_limits<T>::infinity()))
    throw IndexError("softmax row is fully masked");
  double total = 0.0;
  for (std::size_t j = 0; j < visible; ++j) {
    row[j] = std::exp(row[j] - peak);
    total += row[j];
  }
  const T inv = static_cast<T>(1.0 / total);
  for (std::size_t j = 0; j < visible; ++j) row[j] *= inv;
  std::fill(row.begin() + static_cast<std::ptrdiff_t>(visible), row.end(), T(0));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores, Mask mask) {
  require_matrix(scores, "softmax input");
  if (mask == Mask::Causal && scores.dim(0) != scores.dim(1))
    throw DimensionError("causal softmax needs a square score matrix, got " + shape_string(scores.shape()));
  Tensor<T> out = scores;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::span<T> r = out.row(i);
    if (mask == Mask::Causal) {
      // Masked entries become exact zeros.
      for (std::size_t j = i + 1; j < r.size(); ++j) r[j] = -std::numeric_limits<T>::infinity();
      softmax_row_inplace(r, i + 1);
    } else {
      softmax_row_inplace(r, r.size());
    }
  }
  return out;
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, double eps) {
  if (!(eps >= 0.0)) throw ConfigError("rms_norm eps must be non-negative");
  if (gain.rank() != 1 || gain.dim(0) != x.cols()) shape_mismatch("rms_norm", x.shape(), gain.shape());
  Tensor<T> out = x;
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::span<T> r = out.row(i);
    double ss = 0.0;
    for (T v : r) ss += static_cast<double>(v) * v;
    const T inv = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
    for (std::size_t j = 0; j < d; ++j) r[j] = r[j] * inv * gain[j];
  }
  return out;
}

RopeTable::RopeTable(std::size_t d_head, double theta, std::size_t max_positions)
    : d_head_(d_head), theta_(theta), max_positions_(max_positions) {
  if (d_head == 0 || d_head % 2 != 0)
    throw ConfigError("rotary embedding needs an even head width, got " + std::to_string(d_head));
  if (!(theta > 0.0)) throw ConfigError("rotary base must be positive");
  const std::size_t pairs = d_head / 2;
  cos_.resize(max_positions * pairs);
  sin_.resize(max_positions * pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(d_head));
    for (std::size_t p = 0; p < max_positions; ++p) {
      const double angle = static_cast<double>(p) * freq;
      cos_[p * pairs + k] = std::cos(angle);
      sin_[p * pairs + k] = std::sin(angle);
    }
  }
}

template <typename T>
void RopeTable::rotate(T* x, std::size_t pos, bool inverse) const {
  if (pos >= max_positions_) throw IndexError("rotary position " + std::to_string(pos) + " beyond table");
  const std::size_t pairs = d_head_ / 2;
  const double* cs = cos_.data() + pos * pairs;
  const double* sn = sin_.data() + pos * pairs;
  for (std::size_t k = 0; k < pairs; ++k) {
    const T c = static_cast<T>(cs[k]);
    const T s = inverse ? static_cast<T>(-sn[k]) : static_cast<T>(sn[k]);
    const T x0 = x[2 * k];
    const T x1 = x[2 * k + 1];
    x[2 * k] = x0 * c - x1 * s;
    x[2 * k + 1] = x0 * s + x1 * c;
  }
}

template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::size_t> positions, double theta) {
  require_matrix(x, "apply_rope input");
  if (positions.size() != x.dim(0))
    throw DimensionError("apply_rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(x.dim(0)) + " rows");
  std::size_t max_pos = 0;
  for (std::size_t p : positions) max_pos = std::max(max_pos, p);
  const RopeTable table(x.dim(1), theta, max_pos + 1);
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) table.rotate(out.row(i).data(), positions[i]);
  return out;
}

template <typename T>
void require_finite(std::span<const T> values, const char* stage) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i])) throw NonFiniteError(stage, "element " + std::to_string(i));
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) shape_mismatch("add", dst.shape(), src.shape());
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void scale_inplace(Tensor<T>& dst, T factor) {
  for (T& v : dst.values()) v *= factor;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("max_abs_diff", a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

#define GDA_INSTANTIATE_TENSOR(T)                                                                                 \
  template void gemm<T>(Transpose, Transpose, std::size_t, std::size_t, std::size_t, const T*, std::size_t,       \
                        const T*, std::size_t, T*, std::size_t, bool);                                            \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template void softmax_row_inplace<T>(std::span<T>, std::size_t);                                                \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, Mask);                                                     \
  template Tensor<T> rms_norm<T>(const Tensor<T>&, const Tensor<T>&, double);                                     \
  template void RopeTable::rotate<T>(T*, std::size_t, bool) const;                                                \
  template Tensor<T> apply_rope<T>(const Tensor<T>&, std::span<const std::size_t>, double);                       \
  template void require_finite<T>(std::span<const T>, const char*);                                               \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                                     \
  template void scale_inplace<T>(Tensor<T>&, T);                                                                  \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);

GDA_INSTANTIATE_TENSOR(float)
GDA_INSTANTIATE_TENSOR(double)

}  // namespace gda
