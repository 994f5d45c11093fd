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

// Reverse pass of grouped differential attention. Mirrors attention_forward
// stage by stage: output projection, per-head RMSNorm, differential
// combination, the two causal softmax maps, rotary embedding and the input
// projections. The lambda scalar collects gradient from every signal head.

#include <cmath>

#include "gda/attention.hpp"

namespace gda {

namespace {

// In place: grad <- A * (grad - rowdot(grad, A)) * scale over the causal prefix.
template <typename T>
void softmax_backward(const Tensor<T>& map, Tensor<T>& grad, T scale) {
  const std::size_t n = map.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = map.data() + i * n;
    T* g = grad.data() + i * n;
    double dot = 0.0;
    for (std::size_t j = 0; j <= i; ++j) dot += static_cast<double>(g[j]) * a[j];
    const T d = static_cast<T>(dot);
    for (std::size_t j = 0; j <= i; ++j) g[j] = a[j] * (g[j] - d) * scale;
    for (std::size_t j = i + 1; j < n; ++j) g[j] = T(0);
  }
}

template <typename T>
void unrotate_heads(Tensor<T>& t, std::size_t heads, std::size_t d_head, std::size_t seq_len, const RopeTable& rope) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    T* row = t.row(r).data();
    const std::size_t pos = r % seq_len;
    for (std::size_t hd = 0; hd < heads; ++hd) rope.rotate(row + hd * d_head, pos, true);
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_backward(const Tensor<T>& dout, const AttentionCache<T>& cache, const AttentionParams<T>& params,
                             const GdaConfig& cfg, const RopeTable& rope, AttentionParams<T>& grads) {
  const std::size_t s = cfg.signal_heads(), h = cfg.noise_heads(), dh = cfg.d_head, nkv = cfg.n_kv;
  const std::size_t dv = 2 * dh;
  const std::size_t n = cache.seq_len, n_seq = cache.n_seq, rows = n * n_seq;
  if (dout.rank() != 2 || dout.dim(0) != rows || dout.dim(1) != cfg.d_model)
    throw DimensionError("attention upstream gradient has shape " + shape_string(dout.shape()) + ", expected [" +
                         std::to_string(rows) + "x" + std::to_string(cfg.d_model) + "]");
  grads.check_shapes(cfg);

  // Output projection.
  gemm(Transpose::Yes, Transpose::No, s * dv, cfg.d_model, rows, cache.head_out.data(), s * dv, dout.data(),
       cfg.d_model, grads.wo.data(), cfg.d_model, true);
  Tensor<T> d_head_out = matmul_nt(dout, params.wo);

  // Per-head RMSNorm and the (1 - lambda_init) scale.
  const T post_scale = T(1) - params.lambda.init_value();
  Tensor<T> d_raw({rows, s * dv});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < s; ++i) {
      const T* o = cache.head_raw.data() + r * s * dv + i * dv;
      const T* dy = d_head_out.data() + r * s * dv + i * dv;
      const T* g = params.head_norm.data() + i * dv;
      T* dg = grads.head_norm.data() + i * dv;
      T* dox = d_raw.data() + r * s * dv + i * dv;
      const T inv = cache.inv_rms.at(r, i);
      double dot = 0.0;
      for (std::size_t c = 0; c < dv; ++c) {
        const T normed = o[c] * inv;
        const T dn = post_scale * dy[c] * g[c];
        dg[c] += post_scale * dy[c] * normed;
        dox[c] = dn;
        dot += static_cast<double>(dn) * normed;
      }
      const T mean = static_cast<T>(dot / static_cast<double>(dv));
      for (std::size_t c = 0; c < dv; ++c) dox[c] = inv * (dox[c] - o[c] * inv * mean);
    }
  }

  Tensor<T> dq1({rows, s * dh}), dk1({rows, nkv * dh}), dq2({rows, h * dh}), dk2({rows, h * dh});
  Tensor<T> dv_t({rows, nkv * dv});
  const T lambda = cache.lambda;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  double dlambda = 0.0;

  Tensor<T> diff({n, n});
  Tensor<T> dmap({n, n});
  std::vector<Tensor<T>> dnoise(h, Tensor<T>({n, n}));

  for (std::size_t b = 0; b < n_seq; ++b) {
    const std::size_t r0 = b * n;
    for (auto& t : dnoise) t.fill(T(0));
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t u = kv_partner(i, s, nkv);
      const std::size_t j = noise_partner(i, h);
      const Tensor<T>& a1 = cache.signal_maps[b * s + i];
      const Tensor<T>& a2 = cache.noise_maps[b * h + j];
      const T* d_o = d_raw.data() + r0 * s * dv + i * dv;

      for (std::size_t e = 0; e < n * n; ++e) diff[e] = a1[e] - lambda * a2[e];
      // dV_u += diff^T dO_i ; d(diff) = dO_i V_u^T
      gemm(Transpose::Yes, Transpose::No, n, dv, n, diff.data(), n, d_o, s * dv,
           dv_t.data() + r0 * nkv * dv + u * dv, nkv * dv, true);
      gemm(Transpose::No, Transpose::Yes, n, n, dv, d_o, s * dv, cache.v.data() + r0 * nkv * dv + u * dv, nkv * dv,
           dmap.data(), n, false);

      Tensor<T>& dn = dnoise[j];
      double acc = 0.0;
      for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t col = 0; col <= row; ++col) {
          const std::size_t e = row * n + col;
          acc += static_cast<double>(a2[e]) * dmap[e];
          dn[e] -= lambda * dmap[e];
        }
      }
      dlambda -= acc;

      softmax_backward(a1, dmap, scale);
      gemm(Transpose::No, Transpose::No, n, dh, n, dmap.data(), n, cache.k1.data() + r0 * nkv * dh + u * dh, nkv * dh,
           dq1.data() + r0 * s * dh + i * dh, s * dh, true);
      gemm(Transpose::Yes, Transpose::No, n, dh, n, dmap.data(), n, cache.q1.data() + r0 * s * dh + i * dh, s * dh,
           dk1.data() + r0 * nkv * dh + u * dh, nkv * dh, true);
    }
    for (std::size_t j = 0; j < h; ++j) {
      Tensor<T>& dn = dnoise[j];
      softmax_backward(cache.noise_maps[b * h + j], dn, scale);
      gemm(Transpose::No, Transpose::No, n, dh, n, dn.data(), n, cache.k2.data() + r0 * h * dh + j * dh, h * dh,
           dq2.data() + r0 * h * dh + j * dh, h * dh, true);
      gemm(Transpose::Yes, Transpose::No, n, dh, n, dn.data(), n, cache.q2.data() + r0 * h * dh + j * dh, h * dh,
           dk2.data() + r0 * h * dh + j * dh, h * dh, true);
    }
  }

  // lambda = exp(q1.k1) - exp(q2.k2) + init
  const T dl = static_cast<T>(dlambda);
  for (std::size_t c = 0; c < dh; ++c) {
    grads.lambda.q1[c] += dl * cache.exp1 * params.lambda.k1[c];
    grads.lambda.k1[c] += dl * cache.exp1 * params.lambda.q1[c];
    grads.lambda.q2[c] -= dl * cache.exp2 * params.lambda.k2[c];
    grads.lambda.k2[c] -= dl * cache.exp2 * params.lambda.q2[c];
  }

  unrotate_heads(dq1, s, dh, n, rope);
  unrotate_heads(dk1, nkv, dh, n, rope);
  unrotate_heads(dq2, h, dh, n, rope);
  unrotate_heads(dk2, h, dh, n, rope);

  const std::size_t d = cfg.d_model;
  const T* x = cache.x.data();
  Tensor<T> dx({rows, d});
  struct Proj {
    const Tensor<T>& grad;
    const Tensor<T>& weight;
    Tensor<T>& weight_grad;
  };
  const Proj projections[] = {{dq1, params.wq1, grads.wq1},
                              {dk1, params.wk1, grads.wk1},
                              {dq2, params.wq2, grads.wq2},
                              {dk2, params.wk2, grads.wk2},
                              {dv_t, params.wv, grads.wv}};
  for (const Proj& p : projections) {
    const std::size_t w = p.weight.dim(1);
    gemm(Transpose::Yes, Transpose::No, d, w, rows, x, d, p.grad.data(), w, p.weight_grad.data(), w, true);
    gemm(Transpose::No, Transpose::Yes, rows, d, w, p.grad.data(), w, p.weight.data(), w, dx.data(), d, true);
  }
  return dx;
}

template Tensor<float> attention_backward<float>(const Tensor<float>&, const AttentionCache<float>&,
                                                 const AttentionParams<float>&, const GdaConfig&, const RopeTable&,
                                                 AttentionParams<float>&);
template Tensor<double> attention_backward<double>(const Tensor<double>&, const AttentionCache<double>&,
                                                   const AttentionParams<double>&, const GdaConfig&,
                                                   const RopeTable&, AttentionParams<double>&);

}  // namespace gda
