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
#include <span>
#include <string>
#include <vector>

#include "gda/attention.hpp"

namespace gda {

using Token = std::uint32_t;

inline constexpr Token kBosToken = 256;
inline constexpr Token kEosToken = 257;
inline constexpr std::size_t kByteVocab = 258;

/// Byte-level tokenizer: ids 0..255 are raw bytes, plus BOS and EOS.
struct ByteTokenizer {
  static std::vector<Token> encode(std::string_view bytes);
  /// BOS + bytes + EOS.
  static std::vector<Token> encode_document(std::string_view bytes);
  /// Drops BOS/EOS and any id above 255.
  static std::string decode(std::span<const Token> tokens);
};

/// 4 * d_model * 2/3 rounded to the nearest multiple of 64 (at least 64).
std::size_t default_mlp_hidden(std::size_t d_model);

struct LmConfig {
  GdaConfig gda;
  std::size_t vocab_size = kByteVocab;
  std::size_t mlp_hidden = 0;  // 0 selects default_mlp_hidden(d_model)
  bool tie_embeddings = true;

  std::size_t resolved_mlp_hidden() const { return mlp_hidden ? mlp_hidden : default_mlp_hidden(gda.d_model); }
  void validate() const;

  friend bool operator==(const LmConfig&, const LmConfig&) = default;
};

template <typename T>
struct LayerParams {
  Tensor<T> attn_norm;  // [d_model]
  AttentionParams<T> attn;
  Tensor<T> mlp_norm;   // [d_model]
  Tensor<T> w_gate;     // [d_model x F]
  Tensor<T> w_up;       // [d_model x F]
  Tensor<T> w_down;     // [F x d_model]
};

template <typename T>
struct LmParams {
  Tensor<T> embedding;  // [vocab x d_model]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_norm;  // [d_model]
  Tensor<T> lm_head;     // [d_model x vocab]; unset when embeddings are tied
};

/// How the optimiser treats a tensor.
enum class ParamRole {
  Weight,   // decayed
  NoDecay,  // lambda vectors and norm gains
  Fixed,    // lambda offset; never updated
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  ParamRole role;
};

template <typename T>
struct ConstParamRef {
  std::string name;
  const Tensor<T>* tensor;
  ParamRole role;
};

/// Every named tensor of the model in a fixed order.
template <typename T>
std::vector<ParamRef<T>> param_refs(LmParams<T>& params);
template <typename T>
std::vector<ConstParamRef<T>> param_refs(const LmParams<T>& params);

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role;
};

/// Name, shape and role of every tensor `cfg` requires, in param_refs order.
/// Allocates no tensor data.
std::vector<ParamSpec> param_specs(const LmConfig& cfg);

/// All tensor names the architecture of `cfg` requires, in param_refs order.
std::vector<std::string> param_names(const LmConfig& cfg);

/// Zero tensors with the shapes `cfg` requires (unit norm gains).
template <typename T>
LmParams<T> zero_params(const LmConfig& cfg);

/// Same shapes as `params`, all zeros (gradient buffers).
template <typename T>
LmParams<T> zeros_like(const LmParams<T>& params);

template <typename T>
LmParams<T> init_lm_params(const LmConfig& cfg, std::uint64_t seed);

std::uint64_t lm_param_count(const LmConfig& cfg);

/// Intermediates of one batched forward pass.
template <typename T>
struct LmCache {
  std::size_t n_seq = 0, seq_len = 0;
  std::vector<Token> tokens;
  struct Layer {
    Tensor<T> input;           // residual stream entering the layer
    Tensor<T> attn_in;         // rms_norm(input)
    Tensor<T> attn_inv_rms;    // [rows]
    AttentionCache<T> attn;
    Tensor<T> mid;             // input + attention
    Tensor<T> mlp_in;
    Tensor<T> mlp_inv_rms;
    Tensor<T> gate, up;        // pre-activation [rows x F]
    Tensor<T> act;             // silu(gate) * up
  };
  std::vector<Layer> layers;
  Tensor<T> final_in;
  Tensor<T> final_out;
  Tensor<T> final_inv_rms;
};

/// Logits [n_seq*N x vocab] for `n_seq` sequences of equal length stacked in
/// `tokens`. `cache` may be null.
template <typename T>
Tensor<T> lm_forward_batch(std::span<const Token> tokens, std::size_t n_seq, const LmConfig& cfg,
                           const LmParams<T>& params, LmCache<T>* cache = nullptr);

/// Logits [N x vocab] for one sequence.
template <typename T>
Tensor<T> lm_forward(std::span<const Token> tokens, const LmConfig& cfg, const LmParams<T>& params);

/// Residual stream after each layer, [N x d_model] each; used by audits.
template <typename T>
std::vector<Tensor<T>> lm_layer_outputs(std::span<const Token> tokens, const LmConfig& cfg, const LmParams<T>& params);

/// Attention maps of every layer for one sequence.
template <typename T>
std::vector<AttentionMaps<T>> lm_attention_maps(std::span<const Token> tokens, const LmConfig& cfg,
                                                const LmParams<T>& params);

/// Mean of -log softmax(logits)[target] over rows, accumulated in 64-bit.
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const Token> targets);

/// Reverse pass from d(loss)/d(logits); gradients are added into `grads`.
template <typename T>
void lm_backward(const Tensor<T>& dlogits, const LmCache<T>& cache, const LmConfig& cfg, const LmParams<T>& params,
                 LmParams<T>& grads);

/// Mean next-token loss over windows of length seq_len + 1 stacked in
/// `windows`, with gradients added into `grads` when non-null.
template <typename T>
double lm_loss_and_grad(std::span<const Token> windows, std::size_t n_seq, const LmConfig& cfg,
                        const LmParams<T>& params, LmParams<T>* grads);

/// Autoregressive continuation. Temperature 0 is greedy; otherwise sampling
/// is driven by `seed`. The context is truncated to max_seq_len.
template <typename T>
std::vector<Token> generate(std::span<const Token> prompt, const LmConfig& cfg, const LmParams<T>& params,
                            std::size_t n_tokens, double temperature, std::uint64_t seed);


}  // namespace gda
