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

#include "gda/attention.hpp"
#include "gda/lm.hpp"
#include "gda/rng.hpp"

namespace testing {

template <typename T>
gda::Tensor<T> random_tensor(gda::Shape shape, gda::Rng& rng, double stddev = 1.0, double mean = 0.0) {
  gda::Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(mean + stddev * rng.normal());
  return t;
}

// Attention parameters with every field random, including the lambda vectors
// and per-head gains.
template <typename T>
gda::AttentionParams<T> random_attention(const gda::GdaConfig& cfg, gda::Rng& rng, double lambda_init = 0.2,
                                         double weight_std = 0.3) {
  auto p = gda::AttentionParams<T>::zeros(cfg, static_cast<T>(lambda_init));
  for (auto* w : {&p.wq1, &p.wk1, &p.wq2, &p.wk2, &p.wv, &p.wo})
    for (T& v : w->values()) v = static_cast<T>(weight_std * rng.normal());
  for (auto* w : {&p.lambda.q1, &p.lambda.k1, &p.lambda.q2, &p.lambda.k2})
    for (T& v : w->values()) v = static_cast<T>(0.3 * rng.normal());
  for (T& v : p.head_norm.values()) v = static_cast<T>(1.0 + 0.2 * rng.normal());
  return p;
}

inline gda::GdaConfig attention_config(std::size_t d_model, std::size_t heads, std::size_t ratio, std::size_t d_head,
                                       std::size_t n_kv, std::size_t max_seq_len = 8) {
  gda::GdaConfig cfg;
  cfg.d_model = d_model;
  cfg.n_layers = 1;
  cfg.n_heads = heads;
  cfg.ratio = ratio;
  cfg.d_head = d_head;
  cfg.n_kv = n_kv;
  cfg.max_seq_len = max_seq_len;
  return cfg;
}

// Two layers, d_model 16, 8 heads at 1:1, head width 4.
inline gda::LmConfig toy_lm(gda::Precision precision = gda::Precision::F64, bool tied = true) {
  gda::LmConfig cfg;
  cfg.gda = attention_config(16, 8, 1, 4, 4, 16);
  cfg.gda.n_layers = 2;
  cfg.gda.precision = precision;
  cfg.mlp_hidden = 32;
  cfg.tie_embeddings = tied;
  return cfg;
}

// Default init with scaled weights and perturbed gains.
template <typename T>
gda::LmParams<T> busy_params(const gda::LmConfig& cfg, std::uint64_t seed, double weight_scale = 5.0) {
  gda::LmParams<T> p = gda::init_lm_params<T>(cfg, seed);
  gda::Rng rng(seed ^ 0x5eedull);
  for (auto& ref : gda::param_refs(p)) {
    if (ref.role == gda::ParamRole::Weight) gda::scale_inplace(*ref.tensor, static_cast<T>(weight_scale));
    if (ref.role == gda::ParamRole::NoDecay)
      for (T& v : ref.tensor->values()) v += static_cast<T>(0.2 * rng.normal());
  }
  return p;
}

inline std::vector<gda::Token> random_tokens(std::size_t n, std::size_t vocab, gda::Rng& rng) {
  std::vector<gda::Token> t(n);
  for (auto& v : t) v = static_cast<gda::Token>(rng.below(vocab));
  return t;
}

}  // namespace testing
