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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gda/rng.hpp"
#include "gda/tensor.hpp"

namespace gda {

enum class LambdaInitMode { Schedule, Fixed };

/// Architecture hyperparameters of a grouped differential attention stack.
///
/// `n_heads` counts signal and noise heads together. They split into
/// `ratio + 1` equal groups: one group of `noise_heads()` heads feeds the
/// subtracted maps and the remaining `signal_heads()` heads produce outputs.
/// `n_kv` key/value units are shared GQA-style by the signal heads; each
/// unit has a key of width `d_head` and a value of width `2 * d_head`.
struct GdaConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 8;
  std::size_t ratio = 1;
  std::size_t d_head = 8;
  std::size_t n_kv = 4;
  double rope_theta = 10000.0;
  std::size_t max_seq_len = 128;
  LambdaInitMode lambda_init_mode = LambdaInitMode::Schedule;
  double lambda_init_value = 0.8;  // used when lambda_init_mode == Fixed
  double lambda_vector_std = 0.1;  // 0 initialises the lambda vectors to zero
  Precision precision = Precision::F64;

  std::size_t noise_heads() const { return n_heads / (ratio + 1); }
  std::size_t signal_heads() const { return n_heads - noise_heads(); }

  /// Checks the head split only: ratio >= 1 and (ratio + 1) | n_heads.
  /// Enough for allocation tables and budget accounting.
  void validate_allocation() const;

  /// Full check required before running a forward pass.
  void validate() const;

  /// Lambda offset for a 1-based layer index under the configured mode.
  double lambda_init_for_layer(std::size_t layer) const;

  friend bool operator==(const GdaConfig&, const GdaConfig&) = default;
};

/// Toy and reference presets. `table1_preset(ratio)` reproduces the 0.9B
/// configurations (48 heads, 12 KV heads, head width 32, hidden 1536,
/// 24 layers); at ratios 5 and 11 the 12 KV heads do not divide the signal
/// heads, so those presets pass validate_allocation() but not validate().
GdaConfig table1_preset(std::size_t ratio);

/// Lambda reparameterisation vectors for one layer plus the fixed offset.
template <typename T>
struct LambdaParams {
  Tensor<T> q1, k1, q2, k2;  // each [d_head]
  Tensor<T> init;            // [1], the fixed offset lambda_init

  T init_value() const { return init[0]; }
};

/// All weights of one attention layer. Projections are stored input-major
/// ([d_model x width]) so activations multiply on the left.
template <typename T>
struct AttentionParams {
  Tensor<T> wq1;        // [d_model x S*d_head]
  Tensor<T> wk1;        // [d_model x n_kv*d_head]
  Tensor<T> wq2;        // [d_model x h*d_head]
  Tensor<T> wk2;        // [d_model x h*d_head]
  Tensor<T> wv;         // [d_model x n_kv*2*d_head]
  Tensor<T> wo;         // [S*2*d_head x d_model]
  LambdaParams<T> lambda;
  Tensor<T> head_norm;  // [S x 2*d_head] RMSNorm gains, one row per signal head

  /// Zero weights, unit gains, given lambda offset.
  static AttentionParams zeros(const GdaConfig& cfg, T lambda_init);

  /// Throws DimensionError if any field disagrees with `cfg`.
  void check_shapes(const GdaConfig& cfg) const;
};

/// Truncated-normal(0.02) projections, normal lambda vectors, unit gains.
/// `layer` is 1-based and selects the lambda offset.
template <typename T>
AttentionParams<T> init_attention_params(const GdaConfig& cfg, std::size_t layer, Rng& rng);

inline constexpr double kInitStd = 0.02;

// ---- head index arithmetic -------------------------------------------------

/// floor(i / group_size) for a signal head i < signal_heads.
std::size_t head_group_index(std::size_t i, std::size_t group_size, std::size_t signal_heads);

/// Noise head shared by signal head i: i mod noise_heads. Each noise head
/// serves exactly `ratio` signal heads, and at ratio 1 head i pairs with
/// noise head i.
std::size_t noise_partner(std::size_t i, std::size_t noise_heads);

/// KV unit of signal head i: contiguous blocks of signal_heads / n_kv heads.
std::size_t kv_partner(std::size_t i, std::size_t signal_heads, std::size_t n_kv);

// ---- lambda ----------------------------------------------------------------

/// exp(q1 . k1) - exp(q2 . k2) + init. Unclamped.
template <typename T>
T lambda_value(const LambdaParams<T>& p);

/// 0.8 - 0.6 * exp(-0.3 * (layer - 1)) for a 1-based layer index.
double lambda_init_default(std::size_t layer);

// ---- forward ---------------------------------------------------------------

/// Intermediates of a forward pass over `n_seq` stacked sequences, kept for
/// the backward pass and for inspection.
template <typename T>
struct AttentionCache {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  Tensor<T> x;          // [n_seq*N x d_model]
  Tensor<T> q1, k1;     // rotated, [rows x S*d_head], [rows x n_kv*d_head]
  Tensor<T> q2, k2;     // rotated, [rows x h*d_head]
  Tensor<T> v;          // [rows x n_kv*2*d_head]
  std::vector<Tensor<T>> signal_maps;  // n_seq*S maps, index seq*S + i
  std::vector<Tensor<T>> noise_maps;   // n_seq*h maps, index seq*h + j
  Tensor<T> head_raw;   // differential head outputs before the norm, [rows x S*2*d_head]
  Tensor<T> inv_rms;    // [rows x S]
  Tensor<T> head_out;   // normalised and scaled heads, [rows x S*2*d_head]
  T lambda = T(0);
  T exp1 = T(0);        // exp(q1 . k1)
  T exp2 = T(0);        // exp(q2 . k2)
};

/// Grouped differential attention over `n_seq` independent causal sequences
/// stacked row-wise in `x`. `cache` may be null.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, std::size_t n_seq, const AttentionParams<T>& params,
                            const GdaConfig& cfg, const RopeTable& rope, AttentionCache<T>* cache);

/// Reverse pass of attention_forward. Parameter gradients are added into
/// `grads` (which must already have the parameter shapes); the lambda offset
/// is fixed and receives none. Returns the gradient with respect to x.
template <typename T>
Tensor<T> attention_backward(const Tensor<T>& dout, const AttentionCache<T>& cache, const AttentionParams<T>& params,
                             const GdaConfig& cfg, const RopeTable& rope, AttentionParams<T>& grads);

/// Single-sequence grouped differential attention, x is [N x d_model].
template <typename T>
Tensor<T> gda_forward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg);

/// Balanced differential attention (ratio 1, one KV unit per head) computed
/// head by head without any sharing.
template <typename T>
Tensor<T> diff_attention_forward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg);

template <typename T>
struct AttentionMaps {
  std::vector<Tensor<T>> signal;  // S maps [N x N]
  std::vector<Tensor<T>> noise;   // h maps [N x N]
  std::vector<std::size_t> noise_of_signal;  // noise_partner per signal head
  T lambda = T(0);
  T lambda_init = T(0);
};

/// The softmax maps exactly as used inside gda_forward.
template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg);

// ---- accounting --------------------------------------------------------------

struct AllocationRow {
  std::size_t ratio = 0;
  bool valid = false;
  std::size_t signal_heads = 0;
  std::size_t noise_heads = 0;
  std::string reason;  // empty when valid
};

std::vector<AllocationRow> allocation_table(std::size_t n_heads, const std::vector<std::size_t>& ratios);

struct ParamCount {
  std::uint64_t wq1 = 0, wk1 = 0, wq2 = 0, wk2 = 0, wv = 0, wo = 0;
  std::uint64_t lambda = 0;      // four lambda vectors
  std::uint64_t norm_gains = 0;  // per-head RMSNorm gains

  std::uint64_t projections() const { return wq1 + wk1 + wq2 + wk2 + wv + wo; }
  std::uint64_t total() const { return projections() + lambda + norm_gains; }
};

/// Per-layer attention parameter counts. Needs only validate_allocation().
ParamCount param_count(const GdaConfig& cfg);

/// Forward FLOPs of one attention layer on one sequence of length n, with
/// 2*m*n*k per matrix product and dense (unmasked) score maps.
struct FlopsEstimate {
  std::uint64_t seq_len = 0;
  std::uint64_t q1_proj = 0, k1_proj = 0, q2_proj = 0, k2_proj = 0, v_proj = 0;
  std::uint64_t score_maps = 0;   // number of distinct N x N maps (signal + noise)
  std::uint64_t score_flops = 0;
  std::uint64_t value_products = 0;  // number of map-times-value products
  std::uint64_t value_flops = 0;
  std::uint64_t out_proj = 0;

  std::uint64_t projections() const { return q1_proj + k1_proj + q2_proj + k2_proj + v_proj; }
  std::uint64_t total() const { return projections() + score_flops + value_flops + out_proj; }
};

FlopsEstimate flops_estimate(const GdaConfig& cfg, std::size_t seq_len);

}  // namespace gda
