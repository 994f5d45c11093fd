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

// Straight-line reference implementations used only by the tests. They share
// no kernels with the library: every product is a plain loop, every map is
// materialised per head, and nothing is reused between heads.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gda/attention.hpp"
#include "gda/lm.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const gda::Tensor<double>& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

// Columns [start, start + width) of m.
inline Mat cols(const Mat& m, std::size_t start, std::size_t width) {
  Mat out(m.size(), std::vector<double>(width));
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) out[r][c] = m[r][start + c];
  return out;
}

// Rotates pairs (2k, 2k+1) of v by pos * theta^(-2k/d).
inline std::vector<double> rope(std::vector<double> v, std::size_t pos, double theta) {
  const std::size_t d = v.size();
  for (std::size_t k = 0; k < d / 2; ++k) {
    const double angle = static_cast<double>(pos) * std::pow(theta, -2.0 * static_cast<double>(k) / d);
    const double a = v[2 * k], b = v[2 * k + 1];
    v[2 * k] = a * std::cos(angle) - b * std::sin(angle);
    v[2 * k + 1] = a * std::sin(angle) + b * std::cos(angle);
  }
  return v;
}

inline Mat rope_rows(const Mat& m, double theta) {
  Mat out = m;
  for (std::size_t p = 0; p < m.size(); ++p) out[p] = rope(m[p], p, theta);
  return out;
}

// Causal softmax(q k^T / sqrt(d)).
inline Mat causal_map(const Mat& q, const Mat& k) {
  const std::size_t n = q.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[0].size(); ++c) s += q[i][c] * k[j][c];
      p[i][j] = s * scale;
      mx = std::max(mx, p[i][j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) z += std::exp(p[i][j] - mx);
    for (std::size_t j = 0; j <= i; ++j) p[i][j] = std::exp(p[i][j] - mx) / z;
  }
  return p;
}

inline double lambda(const gda::LambdaParams<double>& l) {
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < l.q1.size(); ++i) d1 += l.q1[i] * l.k1[i];
  for (std::size_t i = 0; i < l.q2.size(); ++i) d2 += l.q2[i] * l.k2[i];
  return std::exp(d1) - std::exp(d2) + l.init[0];
}

inline std::vector<double> rms(const std::vector<double>& x, const double* gain, double eps = 1e-6) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> y(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) y[c] = x[c] * inv * gain[c];
  return y;
}

// Grouped differential attention with every map recomputed per signal head.
// Signal head i reads noise head i mod h and KV unit i / (S / n_kv).
inline Mat gda(const Mat& x, const gda::AttentionParams<double>& p, const gda::GdaConfig& cfg) {
  const std::size_t n = x.size(), s = cfg.signal_heads(), h = cfg.noise_heads(), dh = cfg.d_head;
  const Mat q1 = matmul(x, to_mat(p.wq1)), k1 = matmul(x, to_mat(p.wk1));
  const Mat q2 = matmul(x, to_mat(p.wq2)), k2 = matmul(x, to_mat(p.wk2));
  const Mat v = matmul(x, to_mat(p.wv));
  const double lam = lambda(p.lambda);
  const double post = 1.0 - p.lambda.init[0];
  Mat heads(n, std::vector<double>(s * 2 * dh));
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = i % h;
    const std::size_t u = i / (s / cfg.n_kv);
    const Mat a1 = causal_map(rope_rows(cols(q1, i * dh, dh), cfg.rope_theta),
                              rope_rows(cols(k1, u * dh, dh), cfg.rope_theta));
    const Mat a2 = causal_map(rope_rows(cols(q2, j * dh, dh), cfg.rope_theta),
                              rope_rows(cols(k2, j * dh, dh), cfg.rope_theta));
    Mat diff = a1;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) diff[r][c] = a1[r][c] - lam * a2[r][c];
    const Mat o = matmul(diff, cols(v, u * 2 * dh, 2 * dh));
    for (std::size_t r = 0; r < n; ++r) {
      const std::vector<double> y = rms(o[r], p.head_norm.data() + i * 2 * dh);
      for (std::size_t c = 0; c < 2 * dh; ++c) heads[r][i * 2 * dh + c] = post * y[c];
    }
  }
  return matmul(heads, to_mat(p.wo));
}

// Pre-norm decoder: embedding, per layer attention and gated MLP with
// residuals, final norm and output projection.
inline Mat lm(const std::vector<gda::Token>& tokens, const gda::LmConfig& cfg, const gda::LmParams<double>& p) {
  const std::size_t n = tokens.size(), d = cfg.gda.d_model;
  Mat x(n, std::vector<double>(d));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x[r][c] = p.embedding.at(tokens[r], c);
  for (const auto& L : p.layers) {
    Mat a(n);
    for (std::size_t r = 0; r < n; ++r) a[r] = rms(x[r], L.attn_norm.data());
    const Mat att = gda(a, L.attn, cfg.gda);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) x[r][c] += att[r][c];
    Mat m(n);
    for (std::size_t r = 0; r < n; ++r) m[r] = rms(x[r], L.mlp_norm.data());
    const Mat g = matmul(m, to_mat(L.w_gate)), u = matmul(m, to_mat(L.w_up));
    Mat act = g;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < g[r].size(); ++c) act[r][c] = g[r][c] / (1.0 + std::exp(-g[r][c])) * u[r][c];
    const Mat down = matmul(act, to_mat(L.w_down));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) x[r][c] += down[r][c];
  }
  Mat f(n);
  for (std::size_t r = 0; r < n; ++r) f[r] = rms(x[r], p.final_norm.data());
  if (cfg.tie_embeddings) {
    Mat et(d, std::vector<double>(cfg.vocab_size));
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      for (std::size_t c = 0; c < d; ++c) et[c][v] = p.embedding.at(v, c);
    return matmul(f, et);
  }
  return matmul(f, to_mat(p.lm_head));
}

// Mean of -log softmax(row)[target], summed directly.
inline double cross_entropy(const Mat& logits, const std::vector<gda::Token>& targets) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    double z = 0.0;
    for (double v : logits[r]) z += std::exp(v);
    total += std::log(z) - logits[r][targets[r]];
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace oracle
