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

#include "gda/growth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <variant>

#include "gda/config_io.hpp"
#include "gda/rng.hpp"

namespace gda {

// ---- plans -------------------------------------------------------------------

bool GrowthPlan::is_identity() const {
  return hidden_factor == 1 && signal_factor == 1 && noise_factor == 1 && source == target;
}

std::vector<std::size_t> GrowthPlan::signal_source() const {
  std::vector<std::size_t> src(target.gda.signal_heads(), SIZE_MAX);
  for (std::size_t s = 0; s < clone_layout.size(); ++s)
    for (std::size_t t : clone_layout[s])
      if (t < src.size()) src[t] = s;
  return src;
}

std::string GrowthPlan::describe() const {
  std::ostringstream os;
  os << "hidden " << source.gda.d_model << "->" << target.gda.d_model << " heads " << source.gda.n_heads << "->"
     << target.gda.n_heads << " signal " << source.gda.signal_heads() << "->" << target.gda.signal_heads()
     << " noise " << source.gda.noise_heads() << "->" << target.gda.noise_heads() << " kv " << source.gda.n_kv
     << "->" << target.gda.n_kv << " n=" << hidden_factor << " r=" << signal_factor << " q=" << noise_factor;
  return os.str();
}

GrowthPlan plan_growth(const LmConfig& source, std::size_t hidden_factor, std::size_t signal_factor,
                       std::size_t noise_factor, std::size_t target_kv) {
  try {
    source.validate();
  } catch (const ConfigError& e) {
    throw PlanError(std::string("source config: ") + e.what());
  }
  if (hidden_factor < 1 || signal_factor < 1 || noise_factor < 1)
    throw PlanError("growth factors must be integers >= 1");
  const GdaConfig& g = source.gda;
  const std::size_t s = g.signal_heads(), h = g.noise_heads();
  const std::size_t s2 = signal_factor * s, h2 = noise_factor * h;
  if (s2 % h2 != 0)
    throw PlanError("target split " + std::to_string(s2) + " signal / " + std::to_string(h2) +
                    " noise heads is not an integer ratio");

  if (target_kv != 0 && target_kv != signal_factor * g.n_kv)
    throw PlanError("target n_kv " + std::to_string(target_kv) + " cannot preserve the function; growing signal heads by " +
                    std::to_string(signal_factor) + " requires n_kv " + std::to_string(signal_factor * g.n_kv));

  GrowthPlan plan;
  plan.source = source;
  plan.hidden_factor = hidden_factor;
  plan.signal_factor = signal_factor;
  plan.noise_factor = noise_factor;
  plan.target = source;
  plan.target.gda.d_model = hidden_factor * g.d_model;
  plan.target.gda.n_heads = s2 + h2;
  plan.target.gda.ratio = s2 / h2;
  plan.target.gda.n_kv = target_kv ? target_kv : signal_factor * g.n_kv;
  plan.target.mlp_hidden = hidden_factor * source.resolved_mlp_hidden();
  plan.target.tie_embeddings = source.tie_embeddings && hidden_factor == 1;

  plan.clone_layout.resize(s);
  for (std::size_t src = 0; src < s; ++src)
    for (std::size_t c = 0; c < signal_factor; ++c) plan.clone_layout[src].push_back(c * s + src);
  for (std::size_t j = 0; j < h2; ++j) plan.noise_source.push_back(j % h);
  for (std::size_t w = 0; w < plan.target.gda.n_kv; ++w) plan.kv_source.push_back(w % g.n_kv);
  return plan;
}

GrowthPlan plan_hyperclone(const LmConfig& source, std::size_t n) {
  if (n < 1) throw PlanError("hyperclone factor must be an integer >= 1");
  return plan_growth(source, n, n, n);
}

GrowthPlan plan_group_diff(const LmConfig& source, std::size_t n, std::size_t target_ratio) {
  const std::size_t ratio = source.gda.ratio;
  if (ratio == 0 || target_ratio < ratio || target_ratio % ratio != 0)
    throw PlanError("target ratio " + std::to_string(target_ratio) + ":1 is not an integer multiple of the source ratio " +
                    std::to_string(ratio) + ":1; signal heads can only be replicated whole");
  return plan_growth(source, n, target_ratio / ratio, 1);
}

void validate_plan(const GrowthPlan& plan) {
  auto fail = [](const std::string& msg) { throw PlanError("invalid growth plan: " + msg); };
  try {
    plan.source.validate();
    plan.target.validate();
  } catch (const ConfigError& e) {
    fail(e.what());
  }
  const LmConfig& a = plan.source;
  const LmConfig& b = plan.target;
  const std::size_t n = plan.hidden_factor;
  if (n < 1 || plan.signal_factor < 1 || plan.noise_factor < 1) fail("factors must be >= 1");
  if (b.gda.d_model != n * a.gda.d_model) fail("target d_model must be hidden_factor * source d_model");
  if (b.resolved_mlp_hidden() != n * a.resolved_mlp_hidden()) fail("target mlp_hidden must be hidden_factor * source");
  if (b.gda.d_head != a.gda.d_head) fail("head width must not change");
  if (b.gda.n_layers != a.gda.n_layers) fail("layer count must not change");
  if (b.vocab_size != a.vocab_size) fail("vocabulary must not change");
  if (b.gda.rope_theta != a.gda.rope_theta || b.gda.max_seq_len != a.gda.max_seq_len) fail("rotary settings must not change");
  if (b.gda.lambda_init_mode != a.gda.lambda_init_mode || b.gda.lambda_init_value != a.gda.lambda_init_value)
    fail("lambda offsets must not change");
  if (b.gda.precision != a.gda.precision) fail("precision must not change");
  if (n > 1 && b.tie_embeddings) fail("a tied output head cannot survive hidden-axis growth");
  if (n == 1 && a.tie_embeddings != b.tie_embeddings) fail("embedding tying must not change when n = 1");

  const std::size_t s = a.gda.signal_heads(), h = a.gda.noise_heads();
  const std::size_t s2 = b.gda.signal_heads(), h2 = b.gda.noise_heads();
  if (s2 != plan.signal_factor * s) fail("target signal heads must be signal_factor * source signal heads");
  if (h2 != plan.noise_factor * h) fail("target noise heads must be noise_factor * source noise heads");

  if (plan.clone_layout.size() != s) fail("clone layout must list every source signal head");
  std::vector<int> seen(s2, 0);
  for (std::size_t src = 0; src < s; ++src) {
    if (plan.clone_layout[src].empty()) fail("source signal head " + std::to_string(src) + " has no clone");
    for (std::size_t t : plan.clone_layout[src]) {
      if (t >= s2) fail("clone target " + std::to_string(t) + " out of range");
      if (seen[t]++) fail("target signal head " + std::to_string(t) + " is claimed twice");
    }
  }
  if (plan.noise_source.size() != h2) fail("noise_source must cover every target noise head");
  for (std::size_t j : plan.noise_source)
    if (j >= h) fail("noise_source refers to a missing source noise head");
  if (plan.kv_source.size() != b.gda.n_kv) fail("kv_source must cover every target KV unit");
  for (std::size_t u : plan.kv_source)
    if (u >= a.gda.n_kv) fail("kv_source refers to a missing source KV unit");

  const auto src_of = plan.signal_source();
  for (std::size_t t = 0; t < s2; ++t) {
    const std::size_t src = src_of[t];
    if (src == SIZE_MAX) fail("target signal head " + std::to_string(t) + " is not a clone of any source head");
    const std::size_t want_noise = noise_partner(src, h);
    const std::size_t got_noise = plan.noise_source[noise_partner(t, h2)];
    if (got_noise != want_noise)
      fail("target signal head " + std::to_string(t) + " (clone of " + std::to_string(src) +
           ") would subtract a copy of noise head " + std::to_string(got_noise) + ", but its source uses " +
           std::to_string(want_noise));
    const std::size_t want_kv = kv_partner(src, s, a.gda.n_kv);
    const std::size_t got_kv = plan.kv_source[kv_partner(t, s2, b.gda.n_kv)];
    if (got_kv != want_kv)
      fail("target signal head " + std::to_string(t) + " (clone of " + std::to_string(src) +
           ") would read a copy of KV unit " + std::to_string(got_kv) + ", but its source reads " +
           std::to_string(want_kv));
  }
}

// ---- weight transforms ---------------------------------------------------------

namespace {

// out[a*din + i, b*bw + c] = w[i, src[b]*bw + c] * row_scale
template <typename T>
Tensor<T> expand_columns(const Tensor<T>& w, std::size_t n, T row_scale, const std::vector<std::size_t>& src,
                         std::size_t bw) {
  const std::size_t din = w.rows(), dout = src.size() * bw;
  Tensor<T> out({n * din, dout});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < din; ++i)
      for (std::size_t b = 0; b < src.size(); ++b)
        for (std::size_t c = 0; c < bw; ++c) {
          const T v = w.at(i, src[b] * bw + c);
          out.at(a * din + i, b * bw + c) = row_scale == T(1) ? v : v * row_scale;
        }
  return out;
}

// out[b*bh + i, a*dout + o] = w[src[b]*bh + i, o] * scale[b]
template <typename T>
Tensor<T> expand_rows(const Tensor<T>& w, const std::vector<std::size_t>& src, std::size_t bh,
                      const std::vector<T>& scale, std::size_t n_out) {
  const std::size_t dout = w.cols();
  Tensor<T> out({src.size() * bh, n_out * dout});
  for (std::size_t b = 0; b < src.size(); ++b)
    for (std::size_t i = 0; i < bh; ++i)
      for (std::size_t a = 0; a < n_out; ++a)
        for (std::size_t o = 0; o < dout; ++o) {
          const T v = w.at(src[b] * bh + i, o);
          out.at(b * bh + i, a * dout + o) = scale[b] == T(1) ? v : v * scale[b];
        }
  return out;
}

template <typename T>
Tensor<T> tile_vector(const Tensor<T>& v, std::size_t n) {
  Tensor<T> out({n * v.size()});
  for (std::size_t a = 0; a < n; ++a) std::copy(v.values().begin(), v.values().end(), out.data() + a * v.size());
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& w) {
  Tensor<T> out({w.cols(), w.rows()});
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out.at(j, i) = w.at(i, j);
  return out;
}

template <typename T>
LmParams<T> grow_params(const LmParams<T>& p, const GrowthPlan& plan, const GrowthOptions& opt) {
  const LmConfig& a = plan.source;
  const LmConfig& b = plan.target;
  const std::size_t n = plan.hidden_factor, dh = a.gda.d_head;
  const T row_scale = opt.scale_hidden ? T(1) / static_cast<T>(n) : T(1);
  const auto sig_src = plan.signal_source();
  std::vector<T> clone_scale(sig_src.size(), T(1));
  std::vector<bool> is_extra_clone(sig_src.size(), false);
  for (std::size_t t = 0; t < sig_src.size(); ++t) {
    const auto& clones = plan.clone_layout[sig_src[t]];
    if (opt.scale_clones) clone_scale[t] = T(1) / static_cast<T>(clones.size());
    is_extra_clone[t] = clones.front() != t;
  }
  Rng rng(opt.noise_seed);

  LmParams<T> out = zero_params<T>(b);
  out.embedding = expand_columns(p.embedding, 1, T(1), std::vector<std::size_t>(n, 0), a.gda.d_model);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    auto& O = out.layers[l];
    O.attn_norm = tile_vector(L.attn_norm, n);
    O.mlp_norm = tile_vector(L.mlp_norm, n);
    O.w_gate = hyperclone_linear(L.w_gate, n, n, opt.scale_hidden);
    O.w_up = hyperclone_linear(L.w_up, n, n, opt.scale_hidden);
    O.w_down = hyperclone_linear(L.w_down, n, n, opt.scale_hidden);

    O.attn.wq1 = expand_columns(L.attn.wq1, n, row_scale, sig_src, dh);
    O.attn.wk1 = expand_columns(L.attn.wk1, n, row_scale, plan.kv_source, dh);
    O.attn.wq2 = expand_columns(L.attn.wq2, n, row_scale, plan.noise_source, dh);
    O.attn.wk2 = expand_columns(L.attn.wk2, n, row_scale, plan.noise_source, dh);
    O.attn.wv = expand_columns(L.attn.wv, n, row_scale, plan.kv_source, 2 * dh);
    O.attn.wo = expand_rows(L.attn.wo, sig_src, 2 * dh, clone_scale, n);
    O.attn.lambda = L.attn.lambda;
    O.attn.head_norm = expand_rows(L.attn.head_norm, sig_src, 1, std::vector<T>(sig_src.size(), T(1)), 1);

    if (opt.clone_noise_std > 0.0) {
      auto& q = O.attn.wq1;
      for (std::size_t r = 0; r < q.rows(); ++r)
        for (std::size_t t = 0; t < sig_src.size(); ++t)
          if (is_extra_clone[t])
            for (std::size_t c = 0; c < dh; ++c)
              q.at(r, t * dh + c) += static_cast<T>(rng.normal() * opt.clone_noise_std);
    }
  }
  out.final_norm = tile_vector(p.final_norm, n);
  if (!b.tie_embeddings) {
    const Tensor<T> head = a.tie_embeddings ? transpose(p.embedding) : p.lm_head;
    out.lm_head = hyperclone_linear(head, n, 1, opt.scale_hidden);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> hyperclone_linear(const Tensor<T>& w, std::size_t n_in, std::size_t n_out, bool scale) {
  if (n_in < 1 || n_out < 1) throw PlanError("hyperclone factors must be >= 1");
  if (w.rank() != 2) throw DimensionError("hyperclone_linear expects a matrix, got " + shape_string(w.shape()));
  const T row_scale = scale ? T(1) / static_cast<T>(n_in) : T(1);
  return expand_columns(w, n_in, row_scale, std::vector<std::size_t>(n_out, 0), w.cols());
}

Checkpoint apply_growth(const Checkpoint& source, const GrowthPlan& plan, const GrowthOptions& options) {
  validate_plan(plan);
  if (!(source.config == plan.source)) throw PlanError("growth plan was made for a different source config");
  source.check_complete();

  Checkpoint out;
  if (plan.is_identity()) {
    out = source;
  } else {
    out.config = plan.target;
    out.step = source.step;
    out.seed = source.seed;
    if (source.config.gda.precision == Precision::F32)
      store_params(out, grow_params(params_from_checkpoint<float>(source), plan, options));
    else
      store_params(out, grow_params(params_from_checkpoint<double>(source), plan, options));
  }
  std::string note = "grown (" + plan.describe() + ")";
  if (!options.scale_hidden || !options.scale_clones) note += " unscaled";
  if (options.clone_noise_std > 0.0) note += " clone_noise=" + format_double(options.clone_noise_std);
  out.provenance = source.provenance.empty() ? note : source.provenance + "; " + note;
  out.check_complete();
  return out;
}

Checkpoint hyperclone_model(const Checkpoint& source, std::size_t n, const GrowthOptions& options) {
  return apply_growth(source, plan_hyperclone(source.config, n), options);
}

Checkpoint group_diff_grow(const Checkpoint& source, const GrowthPlan& plan, const GrowthOptions& options) {
  if (plan.noise_factor != 1 || plan.target.gda.noise_heads() != plan.source.gda.noise_heads())
    throw PlanError("group-differentiated growth keeps the noise heads unreplicated");
  return apply_growth(source, plan, options);
}

// ---- audits ------------------------------------------------------------------

namespace {

using AnyParams = std::variant<LmParams<float>, LmParams<double>>;

AnyParams load_any(const Checkpoint& c) {
  if (c.config.gda.precision == Precision::F32) return params_from_checkpoint<float>(c);
  return params_from_checkpoint<double>(c);
}

Tensor<double> logits_of(const LmConfig& cfg, const AnyParams& p, std::span<const Token> tokens) {
  return std::visit(
      [&](const auto& params) { return lm_forward(tokens, cfg, params).template cast<double>(); }, p);
}

std::vector<Tensor<double>> layers_of(const LmConfig& cfg, const AnyParams& p, std::span<const Token> tokens) {
  return std::visit(
      [&](const auto& params) {
        std::vector<Tensor<double>> out;
        for (auto& t : lm_layer_outputs(tokens, cfg, params)) out.push_back(t.template cast<double>());
        return out;
      },
      p);
}

std::vector<AttentionMaps<double>> maps_of(const LmConfig& cfg, const AnyParams& p, std::span<const Token> tokens) {
  return std::visit(
      [&](const auto& params) {
        std::vector<AttentionMaps<double>> out;
        for (auto& m : lm_attention_maps(tokens, cfg, params)) {
          AttentionMaps<double> d;
          for (auto& s : m.signal) d.signal.push_back(s.template cast<double>());
          for (auto& s : m.noise) d.noise.push_back(s.template cast<double>());
          d.noise_of_signal = m.noise_of_signal;
          d.lambda = m.lambda;
          d.lambda_init = m.lambda_init;
          out.push_back(std::move(d));
        }
        return out;
      },
      p);
}

double max_diff(const Tensor<double>& x, const Tensor<double>& y) {
  if (x.shape() != y.shape()) throw DimensionError("audit: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - y[i]);
    if (!(d <= m)) m = d;  // propagates NaN
  }
  return m;
}

// Wide [N x k*d] against narrow [N x d], block by block.
double blockwise_diff(const Tensor<double>& narrow, const Tensor<double>& wide) {
  const std::size_t d = narrow.cols(), k = wide.cols() / d;
  double m = 0.0;
  for (std::size_t r = 0; r < narrow.rows(); ++r)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = std::abs(narrow.at(r, c) - wide.at(r, a * d + c));
        if (!(diff <= m)) m = diff;
      }
  return m;
}

PreservationReport audit(const Checkpoint& a, const Checkpoint& b, const GrowthPlan* plan, std::size_t n_samples,
                         std::uint64_t seed, double tol, std::size_t seq_len) {
  if (a.config.vocab_size != b.config.vocab_size)
    throw ConfigError("cannot compare checkpoints with vocab sizes " + std::to_string(a.config.vocab_size) + " and " +
                      std::to_string(b.config.vocab_size));
  const std::size_t max_len = std::min(a.config.gda.max_seq_len, b.config.gda.max_seq_len);
  if (seq_len == 0) seq_len = std::min<std::size_t>(16, max_len);
  if (seq_len > max_len) throw ConfigError("audit seq_len exceeds max_seq_len");
  if (n_samples == 0) throw ConfigError("audit needs at least one sample");

  const AnyParams pa = load_any(a), pb = load_any(b);
  const std::size_t da = a.config.gda.d_model, db = b.config.gda.d_model;
  const bool blockwise = (db % da == 0) || (da % db == 0);
  const std::size_t layers = std::min(a.config.gda.n_layers, b.config.gda.n_layers);

  PreservationReport rep;
  rep.n_samples = n_samples;
  rep.seq_len = seq_len;
  rep.seed = seed;
  rep.tolerance = tol;
  if (blockwise) rep.layer_max_diff.assign(layers, 0.0);
  std::vector<std::size_t> sig_src;
  if (plan) {
    rep.clone_map_max_diff = 0.0;
    sig_src = plan->signal_source();
  }

  Rng rng(seed);
  std::vector<Token> tokens(seq_len);
  for (std::size_t sample = 0; sample < n_samples; ++sample) {
    for (auto& t : tokens) t = static_cast<Token>(rng.below(a.config.vocab_size));
    const double d = max_diff(logits_of(a.config, pa, tokens), logits_of(b.config, pb, tokens));
    if (!(d <= rep.max_abs_logit_diff)) rep.max_abs_logit_diff = d;
    if (blockwise) {
      const auto la = layers_of(a.config, pa, tokens), lb = layers_of(b.config, pb, tokens);
      for (std::size_t l = 0; l < layers; ++l) {
        const double ld = da <= db ? blockwise_diff(la[l], lb[l]) : blockwise_diff(lb[l], la[l]);
        if (!(ld <= rep.layer_max_diff[l])) rep.layer_max_diff[l] = ld;
      }
    }
    if (plan) {
      const auto ma = maps_of(a.config, pa, tokens), mb = maps_of(b.config, pb, tokens);
      for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t t = 0; t < mb[l].signal.size(); ++t)
          rep.clone_map_max_diff = std::max(rep.clone_map_max_diff, max_diff(ma[l].signal[sig_src[t]], mb[l].signal[t]));
        for (std::size_t j = 0; j < mb[l].noise.size(); ++j)
          rep.clone_map_max_diff =
              std::max(rep.clone_map_max_diff, max_diff(ma[l].noise[plan->noise_source[j]], mb[l].noise[j]));
      }
    }
  }
  rep.passed = rep.max_abs_logit_diff <= tol;
  return rep;
}

}  // namespace

std::size_t PreservationReport::first_drift_layer() const {
  for (std::size_t l = 0; l < layer_max_diff.size(); ++l)
    if (!(layer_max_diff[l] <= tolerance)) return l;
  return layer_max_diff.size();
}

std::string PreservationReport::to_text() const {
  std::ostringstream os;
  for (std::size_t l = 0; l < layer_max_diff.size(); ++l)
    os << "layer=" << l << " max_abs_diff=" << format_double(layer_max_diff[l]) << '\n';
  os << "summary samples=" << n_samples << " seq_len=" << seq_len << " seed=" << seed
     << " max_abs_logit_diff=" << format_double(max_abs_logit_diff);
  if (clone_map_max_diff >= 0.0) os << " clone_map_max_diff=" << format_double(clone_map_max_diff);
  const std::size_t drift = first_drift_layer();
  os << " tol=" << format_double(tolerance) << " first_drift_layer="
     << (drift < layer_max_diff.size() ? std::to_string(drift) : std::string("none"))
     << " pass=" << (passed ? "true" : "false") << '\n';
  return os.str();
}

PreservationReport verify_preservation(const Checkpoint& a, const Checkpoint& b, std::size_t n_samples,
                                       std::uint64_t seed, double tol, std::size_t seq_len) {
  return audit(a, b, nullptr, n_samples, seed, tol, seq_len);
}

PreservationReport verify_growth(const Checkpoint& source, const Checkpoint& grown, const GrowthPlan& plan,
                                 std::size_t n_samples, std::uint64_t seed, double tol, std::size_t seq_len) {
  if (!(grown.config == plan.target) || !(source.config == plan.source))
    throw PlanError("checkpoints do not match the growth plan");
  return audit(source, grown, &plan, n_samples, seed, tol, seq_len);
}

template Tensor<float> hyperclone_linear(const Tensor<float>&, std::size_t, std::size_t, bool);
template Tensor<double> hyperclone_linear(const Tensor<double>&, std::size_t, std::size_t, bool);

}  // namespace gda
