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

#include "gda/attention.hpp"

#include <cmath>
#include <numeric>

namespace gda {

namespace {

std::string sz(std::size_t v) { return std::to_string(v); }

}  // namespace

void GdaConfig::validate_allocation() const {
  if (ratio < 1) throw ConfigError("ratio must be >= 1");
  if (n_heads == 0) throw ConfigError("n_heads must be >= 1");
  if (n_heads % (ratio + 1) != 0)
    throw ConfigError("ratio " + sz(ratio) + ":1 needs (ratio + 1) = " + sz(ratio + 1) + " to divide n_heads = " +
                      sz(n_heads));
}

void GdaConfig::validate() const {
  validate_allocation();
  if (d_model == 0) throw ConfigError("d_model must be >= 1");
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (d_head == 0 || d_head % 2 != 0) throw ConfigError("d_head must be even and positive, got " + sz(d_head));
  if (n_kv == 0 || signal_heads() % n_kv != 0)
    throw ConfigError("n_kv = " + sz(n_kv) + " must divide the " + sz(signal_heads()) + " signal heads");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be >= 1");
  if (!(rope_theta > 0.0)) throw ConfigError("rope_theta must be positive");
  if (lambda_init_mode == LambdaInitMode::Fixed && !(lambda_init_value >= 0.0 && lambda_init_value < 1.0))
    throw ConfigError("fixed lambda_init must lie in [0, 1)");
  if (!(lambda_vector_std >= 0.0)) throw ConfigError("lambda_vector_std must be non-negative");
}

double GdaConfig::lambda_init_for_layer(std::size_t layer) const {
  return lambda_init_mode == LambdaInitMode::Fixed ? lambda_init_value : lambda_init_default(layer);
}

GdaConfig table1_preset(std::size_t ratio) {
  GdaConfig cfg;
  cfg.d_model = 1536;
  cfg.n_layers = 24;
  cfg.n_heads = 48;
  cfg.ratio = ratio;
  cfg.d_head = 32;
  cfg.n_kv = 12;
  cfg.rope_theta = 10000.0;
  cfg.max_seq_len = 4096;
  cfg.validate_allocation();
  return cfg;
}

template <typename T>
AttentionParams<T> AttentionParams<T>::zeros(const GdaConfig& cfg, T lambda_init) {
  const std::size_t s = cfg.signal_heads(), h = cfg.noise_heads(), dh = cfg.d_head, d = cfg.d_model;
  AttentionParams p;
  p.wq1 = Tensor<T>({d, s * dh});
  p.wk1 = Tensor<T>({d, cfg.n_kv * dh});
  p.wq2 = Tensor<T>({d, h * dh});
  p.wk2 = Tensor<T>({d, h * dh});
  p.wv = Tensor<T>({d, cfg.n_kv * 2 * dh});
  p.wo = Tensor<T>({s * 2 * dh, d});
  p.lambda.q1 = Tensor<T>({dh});
  p.lambda.k1 = Tensor<T>({dh});
  p.lambda.q2 = Tensor<T>({dh});
  p.lambda.k2 = Tensor<T>({dh});
  p.lambda.init = Tensor<T>::filled({1}, lambda_init);
  p.head_norm = Tensor<T>::filled({s, 2 * dh}, T(1));
  return p;
}

template <typename T>
void AttentionParams<T>::check_shapes(const GdaConfig& cfg) const {
  const AttentionParams ref = zeros(cfg, T(0));
  auto check = [](const char* name, const Tensor<T>& got, const Tensor<T>& want) {
    if (got.shape() != want.shape())
      throw DimensionError(std::string("attention ") + name + " has shape " + shape_string(got.shape()) +
                           ", expected " + shape_string(want.shape()));
  };
  check("wq1", wq1, ref.wq1);
  check("wk1", wk1, ref.wk1);
  check("wq2", wq2, ref.wq2);
  check("wk2", wk2, ref.wk2);
  check("wv", wv, ref.wv);
  check("wo", wo, ref.wo);
  check("lambda_q1", lambda.q1, ref.lambda.q1);
  check("lambda_k1", lambda.k1, ref.lambda.k1);
  check("lambda_q2", lambda.q2, ref.lambda.q2);
  check("lambda_k2", lambda.k2, ref.lambda.k2);
  check("lambda_init", lambda.init, ref.lambda.init);
  check("head_norm", head_norm, ref.head_norm);
}

namespace {

template <typename T>
void fill_truncated(Tensor<T>& t, double stddev, Rng& rng) {
  for (T& v : t.values()) v = static_cast<T>(rng.truncated_normal(stddev));
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
  for (T& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

template <typename T>
AttentionParams<T> init_attention_params(const GdaConfig& cfg, std::size_t layer, Rng& rng) {
  cfg.validate();
  AttentionParams<T> p = AttentionParams<T>::zeros(cfg, static_cast<T>(cfg.lambda_init_for_layer(layer)));
  for (Tensor<T>* w : {&p.wq1, &p.wk1, &p.wq2, &p.wk2, &p.wv, &p.wo}) fill_truncated(*w, kInitStd, rng);
  if (cfg.lambda_vector_std > 0.0)
    for (Tensor<T>* w : {&p.lambda.q1, &p.lambda.k1, &p.lambda.q2, &p.lambda.k2})
      fill_normal(*w, cfg.lambda_vector_std, rng);
  return p;
}

std::size_t head_group_index(std::size_t i, std::size_t group_size, std::size_t signal_heads) {
  if (group_size == 0) throw ConfigError("group size must be >= 1");
  if (i >= signal_heads) throw IndexError("head index " + sz(i) + " outside [0, " + sz(signal_heads) + ")");
  return i / group_size;
}

std::size_t noise_partner(std::size_t i, std::size_t noise_heads) {
  if (noise_heads == 0) throw ConfigError("noise head count must be >= 1");
  return i % noise_heads;
}

std::size_t kv_partner(std::size_t i, std::size_t signal_heads, std::size_t n_kv) {
  if (n_kv == 0 || signal_heads % n_kv != 0)
    throw ConfigError("n_kv = " + sz(n_kv) + " must divide " + sz(signal_heads) + " signal heads");
  return i / (signal_heads / n_kv);
}

template <typename T>
T lambda_value(const LambdaParams<T>& p) {
  if (p.q1.size() != p.k1.size() || p.q2.size() != p.k2.size())
    throw DimensionError("lambda vectors must have matching lengths");
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < p.q1.size(); ++i) d1 += static_cast<double>(p.q1[i]) * p.k1[i];
  for (std::size_t i = 0; i < p.q2.size(); ++i) d2 += static_cast<double>(p.q2[i]) * p.k2[i];
  return static_cast<T>(std::exp(d1) - std::exp(d2) + static_cast<double>(p.init_value()));
}

double lambda_init_default(std::size_t layer) {
  if (layer < 1) throw IndexError("layer index is 1-based");
  return 0.8 - 0.6 * std::exp(-0.3 * static_cast<double>(layer - 1));
}

// ---- forward -----------------------------------------------------------------

namespace {

template <typename T>
void rotate_heads(Tensor<T>& t, std::size_t heads, std::size_t d_head, std::size_t seq_len, const RopeTable& rope) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    T* row = t.row(r).data();
    const std::size_t pos = r % seq_len;
    for (std::size_t hd = 0; hd < heads; ++hd) rope.rotate(row + hd * d_head, pos);
  }
}

// Causal softmax(scale * q k^T) for one head of one sequence.
template <typename T>
void score_map(const T* q, std::size_t ldq, const T* k, std::size_t ldk, std::size_t n, std::size_t d_head, T scale,
               Tensor<T>& map) {
  gemm(Transpose::No, Transpose::Yes, n, n, d_head, q, ldq, k, ldk, map.data(), n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<T> row = map.row(i);
    for (std::size_t j = 0; j <= i; ++j) row[j] *= scale;
    softmax_row_inplace(row, i + 1);
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, std::size_t n_seq, const AttentionParams<T>& params,
                            const GdaConfig& cfg, const RopeTable& rope, AttentionCache<T>* cache) {
  if (x.rank() != 2 || x.dim(1) != cfg.d_model)
    throw DimensionError("attention input must be [rows x " + sz(cfg.d_model) + "], got " + shape_string(x.shape()));
  if (n_seq == 0 || x.dim(0) % n_seq != 0)
    throw DimensionError("attention input rows " + sz(x.dim(0)) + " do not split into " + sz(n_seq) + " sequences");
  const std::size_t n = x.dim(0) / n_seq;
  if (n > cfg.max_seq_len) throw IndexError("sequence length " + sz(n) + " exceeds max_seq_len " + sz(cfg.max_seq_len));
  if (rope.d_head() != cfg.d_head || rope.max_positions() < n) throw ConfigError("rotary table does not fit config");

  const std::size_t s = cfg.signal_heads(), h = cfg.noise_heads(), dh = cfg.d_head, nkv = cfg.n_kv;
  const std::size_t dv = 2 * dh;

  Tensor<T> q1 = matmul(x, params.wq1);
  Tensor<T> k1 = matmul(x, params.wk1);
  Tensor<T> q2 = matmul(x, params.wq2);
  Tensor<T> k2 = matmul(x, params.wk2);
  Tensor<T> v = matmul(x, params.wv);
  rotate_heads(q1, s, dh, n, rope);
  rotate_heads(k1, nkv, dh, n, rope);
  rotate_heads(q2, h, dh, n, rope);
  rotate_heads(k2, h, dh, n, rope);

  double dot1 = 0.0, dot2 = 0.0;
  for (std::size_t i = 0; i < dh; ++i) {
    dot1 += static_cast<double>(params.lambda.q1[i]) * params.lambda.k1[i];
    dot2 += static_cast<double>(params.lambda.q2[i]) * params.lambda.k2[i];
  }
  const T exp1 = static_cast<T>(std::exp(dot1));
  const T exp2 = static_cast<T>(std::exp(dot2));
  const T lambda = static_cast<T>(std::exp(dot1) - std::exp(dot2) + static_cast<double>(params.lambda.init_value()));
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T post_scale = T(1) - params.lambda.init_value();

  const std::size_t rows = x.dim(0);
  Tensor<T> head_raw({rows, s * dv});
  Tensor<T> inv_rms({rows, s});
  Tensor<T> head_out({rows, s * dv});

  std::vector<Tensor<T>> signal_maps, noise_maps;
  if (cache) {
    signal_maps.reserve(n_seq * s);
    noise_maps.reserve(n_seq * h);
  }
  std::vector<Tensor<T>> noise_local(h, Tensor<T>({n, n}));
  Tensor<T> signal_local({n, n});
  Tensor<T> diff({n, n});

  for (std::size_t b = 0; b < n_seq; ++b) {
    const std::size_t r0 = b * n;
    // Each noise map is formed once and shared by its `ratio` signal heads.
    for (std::size_t j = 0; j < h; ++j)
      score_map(q2.data() + r0 * q2.cols() + j * dh, q2.cols(), k2.data() + r0 * k2.cols() + j * dh, k2.cols(), n,
                dh, scale, noise_local[j]);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t u = kv_partner(i, s, nkv);
      const std::size_t j = noise_partner(i, h);
      score_map(q1.data() + r0 * q1.cols() + i * dh, q1.cols(), k1.data() + r0 * k1.cols() + u * dh, k1.cols(), n,
                dh, scale, signal_local);
      const Tensor<T>& noise = noise_local[j];
      for (std::size_t e = 0; e < n * n; ++e) diff[e] = signal_local[e] - lambda * noise[e];
      gemm(Transpose::No, Transpose::No, n, dv, n, diff.data(), n, v.data() + r0 * v.cols() + u * dv, v.cols(),
           head_raw.data() + r0 * head_raw.cols() + i * dv, head_raw.cols(), false);
      if (cache) signal_maps.push_back(signal_local);
    }
    if (cache)
      for (std::size_t j = 0; j < h; ++j) noise_maps.push_back(noise_local[j]);
  }

  // Per-head RMSNorm scaled by (1 - lambda_init).
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < s; ++i) {
      const T* o = head_raw.data() + r * head_raw.cols() + i * dv;
      T* y = head_out.data() + r * head_out.cols() + i * dv;
      const T* g = params.head_norm.data() + i * dv;
      double ss = 0.0;
      for (std::size_t c = 0; c < dv; ++c) ss += static_cast<double>(o[c]) * o[c];
      const T inv = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(dv) + kDefaultRmsEps));
      inv_rms.at(r, i) = inv;
      for (std::size_t c = 0; c < dv; ++c) y[c] = post_scale * (o[c] * inv * g[c]);
    }
  }

  Tensor<T> out = matmul(head_out, params.wo);
  GDA_DEBUG_CHECK_FINITE(out.values(), "attention output");

  if (cache) {
    cache->n_seq = n_seq;
    cache->seq_len = n;
    cache->x = x;
    cache->q1 = std::move(q1);
    cache->k1 = std::move(k1);
    cache->q2 = std::move(q2);
    cache->k2 = std::move(k2);
    cache->v = std::move(v);
    cache->signal_maps = std::move(signal_maps);
    cache->noise_maps = std::move(noise_maps);
    cache->head_raw = std::move(head_raw);
    cache->inv_rms = std::move(inv_rms);
    cache->head_out = std::move(head_out);
    cache->lambda = lambda;
    cache->exp1 = exp1;
    cache->exp2 = exp2;
  }
  return out;
}

template <typename T>
Tensor<T> gda_forward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  const RopeTable rope(cfg.d_head, cfg.rope_theta, std::max<std::size_t>(x.rank() == 2 ? x.dim(0) : 1, 1));
  return attention_forward(x, 1, params, cfg, rope, static_cast<AttentionCache<T>*>(nullptr));
}

namespace {

template <typename T>
Tensor<T> column_block(const Tensor<T>& t, std::size_t start, std::size_t width) {
  Tensor<T> out({t.dim(0), width});
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = t.at(r, start + c);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> diff_attention_forward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg) {
  cfg.validate();
  if (cfg.ratio != 1) throw ConfigError("differential attention requires ratio 1");
  if (cfg.n_kv != cfg.signal_heads()) throw ConfigError("differential attention requires one KV unit per head");
  params.check_shapes(cfg);
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) throw DimensionError("input must be [N x d_model]");
  const std::size_t n = x.dim(0);
  if (n > cfg.max_seq_len) throw IndexError("sequence longer than max_seq_len");

  const std::size_t heads = cfg.signal_heads(), dh = cfg.d_head;
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  const Tensor<T> xq1 = matmul(x, params.wq1), xk1 = matmul(x, params.wk1);
  const Tensor<T> xq2 = matmul(x, params.wq2), xk2 = matmul(x, params.wk2);
  const Tensor<T> xv = matmul(x, params.wv);
  const T lambda = lambda_value(params.lambda);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> concat({n, heads * 2 * dh});
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor<T> q1 = apply_rope(column_block(xq1, i * dh, dh), positions, cfg.rope_theta);
    const Tensor<T> k1 = apply_rope(column_block(xk1, i * dh, dh), positions, cfg.rope_theta);
    const Tensor<T> q2 = apply_rope(column_block(xq2, i * dh, dh), positions, cfg.rope_theta);
    const Tensor<T> k2 = apply_rope(column_block(xk2, i * dh, dh), positions, cfg.rope_theta);
    Tensor<T> s1 = matmul_nt(q1, k1), s2 = matmul_nt(q2, k2);
    scale_inplace(s1, scale);
    scale_inplace(s2, scale);
    const Tensor<T> a1 = softmax_rows(s1, Mask::Causal), a2 = softmax_rows(s2, Mask::Causal);
    Tensor<T> d({n, n});
    for (std::size_t e = 0; e < d.size(); ++e) d[e] = a1[e] - lambda * a2[e];
    const Tensor<T> head = matmul(d, column_block(xv, i * 2 * dh, 2 * dh));
    Tensor<T> gain({2 * dh});
    for (std::size_t c = 0; c < 2 * dh; ++c) gain[c] = params.head_norm.at(i, c);
    Tensor<T> normed = rms_norm(head, gain);
    scale_inplace(normed, T(1) - params.lambda.init_value());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 2 * dh; ++c) concat.at(r, i * 2 * dh + c) = normed.at(r, c);
  }
  return matmul(concat, params.wo);
}

template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  const RopeTable rope(cfg.d_head, cfg.rope_theta, std::max<std::size_t>(x.rank() == 2 ? x.dim(0) : 1, 1));
  AttentionCache<T> cache;
  attention_forward(x, 1, params, cfg, rope, &cache);
  AttentionMaps<T> maps;
  maps.signal = std::move(cache.signal_maps);
  maps.noise = std::move(cache.noise_maps);
  for (std::size_t i = 0; i < cfg.signal_heads(); ++i) maps.noise_of_signal.push_back(noise_partner(i, cfg.noise_heads()));
  maps.lambda = cache.lambda;
  maps.lambda_init = params.lambda.init_value();
  return maps;
}

// ---- accounting ----------------------------------------------------------------

std::vector<AllocationRow> allocation_table(std::size_t n_heads, const std::vector<std::size_t>& ratios) {
  std::vector<AllocationRow> rows;
  rows.reserve(ratios.size());
  for (std::size_t g : ratios) {
    AllocationRow row;
    row.ratio = g;
    if (g < 1) {
      row.reason = "ratio must be >= 1";
    } else if (n_heads % (g + 1) != 0) {
      row.reason = sz(g + 1) + " does not divide " + sz(n_heads);
    } else {
      row.valid = true;
      row.noise_heads = n_heads / (g + 1);
      row.signal_heads = n_heads - row.noise_heads;
    }
    rows.push_back(row);
  }
  return rows;
}

ParamCount param_count(const GdaConfig& cfg) {
  cfg.validate_allocation();
  const std::uint64_t d = cfg.d_model, s = cfg.signal_heads(), h = cfg.noise_heads(), dh = cfg.d_head,
                      kv = cfg.n_kv;
  ParamCount pc;
  pc.wq1 = d * s * dh;
  pc.wk1 = d * kv * dh;
  pc.wq2 = d * h * dh;
  pc.wk2 = d * h * dh;
  pc.wv = d * kv * 2 * dh;
  pc.wo = s * 2 * dh * d;
  pc.lambda = 4 * dh;
  pc.norm_gains = s * 2 * dh;
  return pc;
}

FlopsEstimate flops_estimate(const GdaConfig& cfg, std::size_t seq_len) {
  cfg.validate_allocation();
  if (seq_len == 0) throw ConfigError("sequence length must be >= 1");
  const std::uint64_t n = seq_len, d = cfg.d_model, s = cfg.signal_heads(), h = cfg.noise_heads(),
                      dh = cfg.d_head, kv = cfg.n_kv;
  FlopsEstimate f;
  f.seq_len = n;
  f.q1_proj = 2 * n * d * (s * dh);
  f.k1_proj = 2 * n * d * (kv * dh);
  f.q2_proj = 2 * n * d * (h * dh);
  f.k2_proj = 2 * n * d * (h * dh);
  f.v_proj = 2 * n * d * (kv * 2 * dh);
  f.score_maps = s + h;
  f.score_flops = f.score_maps * 2 * n * n * dh;
  f.value_products = s;
  f.value_flops = s * 2 * n * n * (2 * dh);
  f.out_proj = 2 * n * (s * 2 * dh) * d;
  return f;
}

#define GDA_INSTANTIATE_ATTENTION(T)                                                                            \
  template struct AttentionParams<T>;                                                                           \
  template AttentionParams<T> init_attention_params<T>(const GdaConfig&, std::size_t, Rng&);                    \
  template T lambda_value<T>(const LambdaParams<T>&);                                                           \
  template Tensor<T> attention_forward<T>(const Tensor<T>&, std::size_t, const AttentionParams<T>&,             \
                                          const GdaConfig&, const RopeTable&, AttentionCache<T>*);              \
  template Tensor<T> gda_forward<T>(const Tensor<T>&, const AttentionParams<T>&, const GdaConfig&);             \
  template Tensor<T> diff_attention_forward<T>(const Tensor<T>&, const AttentionParams<T>&, const GdaConfig&);  \
  template AttentionMaps<T> attention_maps<T>(const Tensor<T>&, const AttentionParams<T>&, const GdaConfig&);

GDA_INSTANTIATE_ATTENTION(float)
GDA_INSTANTIATE_ATTENTION(double)

}  // namespace gda
