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

#include "gda/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gda/rng.hpp"

namespace gda {

std::vector<Token> ByteTokenizer::encode(std::string_view bytes) {
  std::vector<Token> out;
  out.reserve(bytes.size());
  for (unsigned char c : bytes) out.push_back(c);
  return out;
}

std::vector<Token> ByteTokenizer::encode_document(std::string_view bytes) {
  std::vector<Token> out;
  out.reserve(bytes.size() + 2);
  out.push_back(kBosToken);
  for (unsigned char c : bytes) out.push_back(c);
  out.push_back(kEosToken);
  return out;
}

std::string ByteTokenizer::decode(std::span<const Token> tokens) {
  std::string out;
  for (Token t : tokens)
    if (t < 256) out.push_back(static_cast<char>(t));
  return out;
}

std::size_t default_mlp_hidden(std::size_t d_model) {
  const std::size_t blocks = (8 * d_model + 96) / 192;  // round(8d/3 / 64)
  return std::max<std::size_t>(blocks, 1) * 64;
}

void LmConfig::validate() const {
  gda.validate();
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (resolved_mlp_hidden() < gda.d_model) throw ConfigError("mlp_hidden must be >= d_model");
}

// ---- parameter registry ----------------------------------------------------------

namespace {

template <typename T, typename Ref, typename Params>
std::vector<Ref> collect_refs(Params& p) {
  std::vector<Ref> refs;
  refs.push_back({"embedding", &p.embedding, ParamRole::Weight});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    refs.push_back({pre + "attn_norm", &L.attn_norm, ParamRole::NoDecay});
    refs.push_back({pre + "attn.wq1", &L.attn.wq1, ParamRole::Weight});
    refs.push_back({pre + "attn.wk1", &L.attn.wk1, ParamRole::Weight});
    refs.push_back({pre + "attn.wq2", &L.attn.wq2, ParamRole::Weight});
    refs.push_back({pre + "attn.wk2", &L.attn.wk2, ParamRole::Weight});
    refs.push_back({pre + "attn.wv", &L.attn.wv, ParamRole::Weight});
    refs.push_back({pre + "attn.wo", &L.attn.wo, ParamRole::Weight});
    refs.push_back({pre + "attn.lambda_q1", &L.attn.lambda.q1, ParamRole::NoDecay});
    refs.push_back({pre + "attn.lambda_k1", &L.attn.lambda.k1, ParamRole::NoDecay});
    refs.push_back({pre + "attn.lambda_q2", &L.attn.lambda.q2, ParamRole::NoDecay});
    refs.push_back({pre + "attn.lambda_k2", &L.attn.lambda.k2, ParamRole::NoDecay});
    refs.push_back({pre + "attn.lambda_init", &L.attn.lambda.init, ParamRole::Fixed});
    refs.push_back({pre + "attn.head_norm", &L.attn.head_norm, ParamRole::NoDecay});
    refs.push_back({pre + "mlp_norm", &L.mlp_norm, ParamRole::NoDecay});
    refs.push_back({pre + "mlp.w_gate", &L.w_gate, ParamRole::Weight});
    refs.push_back({pre + "mlp.w_up", &L.w_up, ParamRole::Weight});
    refs.push_back({pre + "mlp.w_down", &L.w_down, ParamRole::Weight});
  }
  refs.push_back({"final_norm", &p.final_norm, ParamRole::NoDecay});
  if (!p.lm_head.empty()) refs.push_back({"lm_head", &p.lm_head, ParamRole::Weight});
  return refs;
}

}  // namespace

template <typename T>
std::vector<ParamRef<T>> param_refs(LmParams<T>& params) {
  return collect_refs<T, ParamRef<T>>(params);
}

template <typename T>
std::vector<ConstParamRef<T>> param_refs(const LmParams<T>& params) {
  return collect_refs<T, ConstParamRef<T>>(params);
}

template <typename T>
LmParams<T> zero_params(const LmConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.gda.d_model, f = cfg.resolved_mlp_hidden(), v = cfg.vocab_size;
  LmParams<T> p;
  p.embedding = Tensor<T>({v, d});
  for (std::size_t l = 0; l < cfg.gda.n_layers; ++l) {
    LayerParams<T> L;
    L.attn_norm = Tensor<T>::filled({d}, T(1));
    L.attn = AttentionParams<T>::zeros(cfg.gda, static_cast<T>(cfg.gda.lambda_init_for_layer(l + 1)));
    L.mlp_norm = Tensor<T>::filled({d}, T(1));
    L.w_gate = Tensor<T>({d, f});
    L.w_up = Tensor<T>({d, f});
    L.w_down = Tensor<T>({f, d});
    p.layers.push_back(std::move(L));
  }
  p.final_norm = Tensor<T>::filled({d}, T(1));
  if (!cfg.tie_embeddings) p.lm_head = Tensor<T>({d, v});
  return p;
}

std::vector<ParamSpec> param_specs(const LmConfig& cfg) {
  cfg.validate();
  const GdaConfig& g = cfg.gda;
  const std::size_t d = g.d_model, f = cfg.resolved_mlp_hidden(), v = cfg.vocab_size;
  const std::size_t s = g.signal_heads(), h = g.noise_heads(), dh = g.d_head;
  std::vector<ParamSpec> specs;
  specs.push_back({"embedding", {v, d}, ParamRole::Weight});
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    specs.push_back({pre + "attn_norm", {d}, ParamRole::NoDecay});
    specs.push_back({pre + "attn.wq1", {d, s * dh}, ParamRole::Weight});
    specs.push_back({pre + "attn.wk1", {d, g.n_kv * dh}, ParamRole::Weight});
    specs.push_back({pre + "attn.wq2", {d, h * dh}, ParamRole::Weight});
    specs.push_back({pre + "attn.wk2", {d, h * dh}, ParamRole::Weight});
    specs.push_back({pre + "attn.wv", {d, g.n_kv * 2 * dh}, ParamRole::Weight});
    specs.push_back({pre + "attn.wo", {s * 2 * dh, d}, ParamRole::Weight});
    for (const char* n : {"attn.lambda_q1", "attn.lambda_k1", "attn.lambda_q2", "attn.lambda_k2"})
      specs.push_back({pre + n, {dh}, ParamRole::NoDecay});
    specs.push_back({pre + "attn.lambda_init", {1}, ParamRole::Fixed});
    specs.push_back({pre + "attn.head_norm", {s, 2 * dh}, ParamRole::NoDecay});
    specs.push_back({pre + "mlp_norm", {d}, ParamRole::NoDecay});
    specs.push_back({pre + "mlp.w_gate", {d, f}, ParamRole::Weight});
    specs.push_back({pre + "mlp.w_up", {d, f}, ParamRole::Weight});
    specs.push_back({pre + "mlp.w_down", {f, d}, ParamRole::Weight});
  }
  specs.push_back({"final_norm", {d}, ParamRole::NoDecay});
  if (!cfg.tie_embeddings) specs.push_back({"lm_head", {d, v}, ParamRole::Weight});
  return specs;
}

std::vector<std::string> param_names(const LmConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& s : param_specs(cfg)) names.push_back(s.name);
  return names;
}

template <typename T>
LmParams<T> zeros_like(const LmParams<T>& params) {
  LmParams<T> out = params;
  for (auto& r : param_refs(out)) r.tensor->fill(T(0));
  return out;
}

template <typename T>
LmParams<T> init_lm_params(const LmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LmParams<T> p = zero_params<T>(cfg);
  Rng rng(seed);
  auto fill = [&rng](Tensor<T>& t) {
    for (T& x : t.values()) x = static_cast<T>(rng.truncated_normal(kInitStd));
  };
  fill(p.embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    L.attn = init_attention_params<T>(cfg.gda, l + 1, rng);
    fill(L.w_gate);
    fill(L.w_up);
    fill(L.w_down);
  }
  if (!p.lm_head.empty()) fill(p.lm_head);
  return p;
}

std::uint64_t lm_param_count(const LmConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& s : param_specs(cfg))
    if (s.role != ParamRole::Fixed) n += shape_product(s.shape);
  return n;
}

// ---- forward ---------------------------------------------------------------------

namespace {

constexpr double kNormEps = kDefaultRmsEps;

// y = x * inv_rms(row) * gain; also records inv_rms per row.
template <typename T>
Tensor<T> rms_forward(const Tensor<T>& x, const Tensor<T>& gain, Tensor<T>* inv_out) {
  const std::size_t d = x.cols();
  Tensor<T> y({x.rows(), d});
  if (inv_out) *inv_out = Tensor<T>({x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.data() + r * d;
    T* yr = y.data() + r * d;
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += static_cast<double>(xr[c]) * xr[c];
    const T inv = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + kNormEps));
    if (inv_out) (*inv_out)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) yr[c] = xr[c] * inv * gain[c];
  }
  return y;
}

// Adds the input gradient of rms_forward into dx and the gain gradient into dgain.
template <typename T>
void rms_backward(const Tensor<T>& x, const Tensor<T>& inv_rms, const Tensor<T>& gain, const Tensor<T>& dy,
                  Tensor<T>& dgain, Tensor<T>& dx) {
  const std::size_t d = x.cols();
  std::vector<T> dn(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.data() + r * d;
    const T* dyr = dy.data() + r * d;
    T* dxr = dx.data() + r * d;
    const T inv = inv_rms[r];
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const T normed = xr[c] * inv;
      dgain[c] += dyr[c] * normed;
      dn[c] = dyr[c] * gain[c];
      dot += static_cast<double>(dn[c]) * normed;
    }
    const T mean = static_cast<T>(dot / static_cast<double>(d));
    for (std::size_t c = 0; c < d; ++c) dxr[c] += inv * (dn[c] - xr[c] * inv * mean);
  }
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void check_tokens(std::span<const Token> tokens, std::size_t n_seq, const LmConfig& cfg) {
  if (n_seq == 0 || tokens.empty() || tokens.size() % n_seq != 0)
    throw DimensionError(std::to_string(tokens.size()) + " tokens do not split into " + std::to_string(n_seq) +
                         " sequences");
  const std::size_t n = tokens.size() / n_seq;
  if (n > cfg.gda.max_seq_len)
    throw IndexError("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                     std::to_string(cfg.gda.max_seq_len));
  for (Token t : tokens)
    if (t >= cfg.vocab_size)
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
}

}  // namespace

template <typename T>
Tensor<T> lm_forward_batch(std::span<const Token> tokens, std::size_t n_seq, const LmConfig& cfg,
                           const LmParams<T>& params, LmCache<T>* cache) {
  check_tokens<T>(tokens, n_seq, cfg);
  if (params.layers.size() != cfg.gda.n_layers) throw DimensionError("parameter layer count differs from config");
  const std::size_t n = tokens.size() / n_seq, rows = tokens.size(), d = cfg.gda.d_model, f = cfg.resolved_mlp_hidden();
  const RopeTable rope(cfg.gda.d_head, cfg.gda.rope_theta, n);

  Tensor<T> x({rows, d});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* e = params.embedding.data() + static_cast<std::size_t>(tokens[r]) * d;
    std::copy(e, e + d, x.data() + r * d);
  }
  if (cache) {
    cache->n_seq = n_seq;
    cache->seq_len = n;
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.clear();
    cache->layers.resize(params.layers.size());
  }

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams<T>& L = params.layers[l];
    typename LmCache<T>::Layer* lc = cache ? &cache->layers[l] : nullptr;

    Tensor<T> attn_inv, mlp_inv;
    Tensor<T> attn_in = rms_forward(x, L.attn_norm, lc ? &attn_inv : nullptr);
    Tensor<T> attn_out = attention_forward(attn_in, n_seq, L.attn, cfg.gda, rope, lc ? &lc->attn : nullptr);
    Tensor<T> mid = x;
    add_inplace(mid, attn_out);

    Tensor<T> mlp_in = rms_forward(mid, L.mlp_norm, lc ? &mlp_inv : nullptr);
    Tensor<T> gate = matmul(mlp_in, L.w_gate);
    Tensor<T> up = matmul(mlp_in, L.w_up);
    Tensor<T> act({rows, f});
    for (std::size_t e = 0; e < act.size(); ++e) act[e] = gate[e] * sigmoid(gate[e]) * up[e];
    Tensor<T> next = matmul(act, L.w_down);
    add_inplace(next, mid);

    if (lc) {
      lc->input = std::move(x);
      lc->attn_in = std::move(attn_in);
      lc->attn_inv_rms = std::move(attn_inv);
      lc->mid = std::move(mid);
      lc->mlp_in = std::move(mlp_in);
      lc->mlp_inv_rms = std::move(mlp_inv);
      lc->gate = std::move(gate);
      lc->up = std::move(up);
      lc->act = std::move(act);
    }
    x = std::move(next);
  }

  Tensor<T> final_inv;
  Tensor<T> final_out = rms_forward(x, params.final_norm, cache ? &final_inv : nullptr);
  Tensor<T> logits = cfg.tie_embeddings ? matmul_nt(final_out, params.embedding) : matmul(final_out, params.lm_head);
  GDA_DEBUG_CHECK_FINITE(logits.values(), "logits");
  if (cache) {
    cache->final_in = std::move(x);
    cache->final_out = std::move(final_out);
    cache->final_inv_rms = std::move(final_inv);
  }
  return logits;
}

template <typename T>
Tensor<T> lm_forward(std::span<const Token> tokens, const LmConfig& cfg, const LmParams<T>& params) {
  return lm_forward_batch(tokens, 1, cfg, params, static_cast<LmCache<T>*>(nullptr));
}

template <typename T>
std::vector<Tensor<T>> lm_layer_outputs(std::span<const Token> tokens, const LmConfig& cfg,
                                        const LmParams<T>& params) {
  LmCache<T> cache;
  lm_forward_batch(tokens, 1, cfg, params, &cache);
  std::vector<Tensor<T>> out;
  for (std::size_t l = 1; l < cache.layers.size(); ++l) out.push_back(cache.layers[l].input);
  out.push_back(cache.final_in);
  return out;
}

template <typename T>
std::vector<AttentionMaps<T>> lm_attention_maps(std::span<const Token> tokens, const LmConfig& cfg,
                                                const LmParams<T>& params) {
  LmCache<T> cache;
  lm_forward_batch(tokens, 1, cfg, params, &cache);
  std::vector<AttentionMaps<T>> out;
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    AttentionCache<T>& ac = cache.layers[l].attn;
    AttentionMaps<T> maps;
    maps.signal = std::move(ac.signal_maps);
    maps.noise = std::move(ac.noise_maps);
    for (std::size_t i = 0; i < cfg.gda.signal_heads(); ++i)
      maps.noise_of_signal.push_back(noise_partner(i, cfg.gda.noise_heads()));
    maps.lambda = ac.lambda;
    maps.lambda_init = params.layers[l].attn.lambda.init_value();
    out.push_back(std::move(maps));
  }
  return out;
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const Token> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size())
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::span<const T> row = logits.row(r);
    if (targets[r] >= row.size()) throw IndexError("target id outside vocabulary");
    double peak = -std::numeric_limits<double>::infinity();
    for (T v : row) peak = std::max(peak, static_cast<double>(v));
    double sum = 0.0;
    for (T v : row) sum += std::exp(static_cast<double>(v) - peak);
    total += peak + std::log(sum) - static_cast<double>(row[targets[r]]);
  }
  return total / static_cast<double>(logits.rows());
}

// ---- backward --------------------------------------------------------------------

template <typename T>
void lm_backward(const Tensor<T>& dlogits, const LmCache<T>& cache, const LmConfig& cfg, const LmParams<T>& params,
                 LmParams<T>& grads) {
  const std::size_t rows = cache.n_seq * cache.seq_len, d = cfg.gda.d_model, v = cfg.vocab_size;
  const std::size_t f = cfg.resolved_mlp_hidden();
  if (dlogits.rank() != 2 || dlogits.dim(0) != rows || dlogits.dim(1) != v)
    throw DimensionError("logit gradient has shape " + shape_string(dlogits.shape()));
  const RopeTable rope(cfg.gda.d_head, cfg.gda.rope_theta, cache.seq_len);

  Tensor<T> dfinal;
  if (cfg.tie_embeddings) {
    gemm(Transpose::Yes, Transpose::No, v, d, rows, dlogits.data(), v, cache.final_out.data(), d,
         grads.embedding.data(), d, true);
    dfinal = matmul(dlogits, params.embedding);
  } else {
    gemm(Transpose::Yes, Transpose::No, d, v, rows, cache.final_out.data(), d, dlogits.data(), v,
         grads.lm_head.data(), v, true);
    dfinal = matmul_nt(dlogits, params.lm_head);
  }
  Tensor<T> dx({rows, d});
  rms_backward(cache.final_in, cache.final_inv_rms, params.final_norm, dfinal, grads.final_norm, dx);

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams<T>& L = params.layers[l];
    LayerParams<T>& G = grads.layers[l];
    const typename LmCache<T>::Layer& lc = cache.layers[l];

    // next = mid + act * w_down
    gemm(Transpose::Yes, Transpose::No, f, d, rows, lc.act.data(), f, dx.data(), d, G.w_down.data(), d, true);
    Tensor<T> dact = matmul_nt(dx, L.w_down);
    Tensor<T> dgate({rows, f}), dup({rows, f});
    for (std::size_t e = 0; e < dact.size(); ++e) {
      const T z = lc.gate[e];
      const T sg = sigmoid(z);
      dup[e] = dact[e] * z * sg;
      dgate[e] = dact[e] * lc.up[e] * sg * (T(1) + z * (T(1) - sg));
    }
    gemm(Transpose::Yes, Transpose::No, d, f, rows, lc.mlp_in.data(), d, dgate.data(), f, G.w_gate.data(), f, true);
    gemm(Transpose::Yes, Transpose::No, d, f, rows, lc.mlp_in.data(), d, dup.data(), f, G.w_up.data(), f, true);
    Tensor<T> dmlp_in = matmul_nt(dgate, L.w_gate);
    gemm(Transpose::No, Transpose::Yes, rows, d, f, dup.data(), f, L.w_up.data(), f, dmlp_in.data(), d, true);
    Tensor<T> dmid = dx;
    rms_backward(lc.mid, lc.mlp_inv_rms, L.mlp_norm, dmlp_in, G.mlp_norm, dmid);

    // mid = input + attention(rms(input))
    Tensor<T> dattn_in = attention_backward(dmid, lc.attn, L.attn, cfg.gda, rope, G.attn);
    dx = std::move(dmid);
    rms_backward(lc.input, lc.attn_inv_rms, L.attn_norm, dattn_in, G.attn_norm, dx);
  }

  for (std::size_t r = 0; r < rows; ++r) {
    T* g = grads.embedding.data() + static_cast<std::size_t>(cache.tokens[r]) * d;
    const T* src = dx.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) g[c] += src[c];
  }
}

template <typename T>
double lm_loss_and_grad(std::span<const Token> windows, std::size_t n_seq, const LmConfig& cfg,
                        const LmParams<T>& params, LmParams<T>* grads) {
  if (n_seq == 0 || windows.size() % n_seq != 0 || windows.size() / n_seq < 2)
    throw DimensionError("training windows must hold n_seq rows of at least two tokens");
  const std::size_t w = windows.size() / n_seq, n = w - 1;
  std::vector<Token> inputs, targets;
  inputs.reserve(n_seq * n);
  targets.reserve(n_seq * n);
  for (std::size_t b = 0; b < n_seq; ++b) {
    inputs.insert(inputs.end(), windows.begin() + b * w, windows.begin() + b * w + n);
    targets.insert(targets.end(), windows.begin() + b * w + 1, windows.begin() + (b + 1) * w);
  }
  LmCache<T> cache;
  Tensor<T> logits = lm_forward_batch<T>(inputs, n_seq, cfg, params, grads ? &cache : nullptr);
  const double loss = cross_entropy(logits, targets);
  if (!grads) return loss;

  // d(mean CE)/d(logits) = (softmax - onehot) / rows
  const std::size_t rows = logits.rows(), v = logits.cols();
  const T inv_rows = static_cast<T>(1.0 / static_cast<double>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<T> row = logits.row(r);
    T peak = row[0];
    for (T x : row) peak = std::max(peak, x);
    double sum = 0.0;
    for (T& x : row) {
      x = std::exp(x - peak);
      sum += x;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::size_t c = 0; c < v; ++c) row[c] = row[c] * inv * inv_rows;
    row[targets[r]] -= inv_rows;
  }
  lm_backward(logits, cache, cfg, params, *grads);
  return loss;
}

template <typename T>
std::vector<Token> generate(std::span<const Token> prompt, const LmConfig& cfg, const LmParams<T>& params,
                            std::size_t n_tokens, double temperature, std::uint64_t seed) {
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  std::vector<Token> seq(prompt.begin(), prompt.end());
  if (n_tokens == 0) return seq;
  if (seq.empty()) seq.push_back(kBosToken);
  Rng rng(seed);
  for (std::size_t step = 0; step < n_tokens; ++step) {
    const std::size_t ctx = std::min(seq.size(), cfg.gda.max_seq_len);
    std::span<const Token> window(seq.data() + seq.size() - ctx, ctx);
    const Tensor<T> logits = lm_forward(window, cfg, params);
    std::span<const T> last = logits.row(ctx - 1);
    Token next = 0;
    if (temperature == 0.0) {
      next = static_cast<Token>(std::max_element(last.begin(), last.end()) - last.begin());
    } else {
      double peak = -std::numeric_limits<double>::infinity();
      for (T x : last) peak = std::max(peak, static_cast<double>(x));
      std::vector<double> probs(last.size());
      double total = 0.0;
      for (std::size_t c = 0; c < last.size(); ++c) total += probs[c] = std::exp((last[c] - peak) / temperature);
      double u = rng.uniform() * total;
      next = static_cast<Token>(last.size() - 1);
      for (std::size_t c = 0; c < probs.size(); ++c) {
        if (u < probs[c]) {
          next = static_cast<Token>(c);
          break;
        }
        u -= probs[c];
      }
    }
    seq.push_back(next);
  }
  return seq;
}

#define GDA_INSTANTIATE_LM(T)                                                                                     \
  template std::vector<ParamRef<T>> param_refs<T>(LmParams<T>&);                                                  \
  template std::vector<ConstParamRef<T>> param_refs<T>(const LmParams<T>&);                                       \
  template LmParams<T> zero_params<T>(const LmConfig&);                                                           \
  template LmParams<T> zeros_like<T>(const LmParams<T>&);                                                         \
  template LmParams<T> init_lm_params<T>(const LmConfig&, std::uint64_t);                                         \
  template Tensor<T> lm_forward_batch<T>(std::span<const Token>, std::size_t, const LmConfig&, const LmParams<T>&, \
                                         LmCache<T>*);                                                            \
  template Tensor<T> lm_forward<T>(std::span<const Token>, const LmConfig&, const LmParams<T>&);                  \
  template std::vector<Tensor<T>> lm_layer_outputs<T>(std::span<const Token>, const LmConfig&,                    \
                                                      const LmParams<T>&);                                        \
  template std::vector<AttentionMaps<T>> lm_attention_maps<T>(std::span<const Token>, const LmConfig&,            \
                                                              const LmParams<T>&);                                \
  template double cross_entropy<T>(const Tensor<T>&, std::span<const Token>);                                     \
  template void lm_backward<T>(const Tensor<T>&, const LmCache<T>&, const LmConfig&, const LmParams<T>&,          \
                               LmParams<T>&);                                                                     \
  template double lm_loss_and_grad<T>(std::span<const Token>, std::size_t, const LmConfig&, const LmParams<T>&,   \
                                      LmParams<T>*);                                                              \
  template std::vector<Token> generate<T>(std::span<const Token>, const LmConfig&, const LmParams<T>&,            \
                                          std::size_t, double, std::uint64_t);

GDA_INSTANTIATE_LM(float)
GDA_INSTANTIATE_LM(double)

}  // namespace gda
