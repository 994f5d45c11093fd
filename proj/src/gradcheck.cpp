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

#include "gda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "gda/rng.hpp"

namespace gda {

template <typename T>
AttentionGrads<T> backward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg,
                           const Tensor<T>& upstream) {
  cfg.validate();
  params.check_shapes(cfg);
  if (upstream.shape() != Shape{x.dim(0), cfg.d_model})
    throw DimensionError("upstream gradient shape " + shape_string(upstream.shape()) + " does not match output");
  const RopeTable rope(cfg.d_head, cfg.rope_theta, x.dim(0));
  AttentionCache<T> cache;
  attention_forward(x, 1, params, cfg, rope, &cache);
  AttentionGrads<T> g;
  g.params = AttentionParams<T>::zeros(cfg, T(0));
  g.params.head_norm.fill(T(0));
  g.x = attention_backward(upstream, cache, params, cfg, rope, g.params);
  return g;
}

std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> theta, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("finite-difference epsilon must be positive");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + epsilon;
    const double up = f(point);
    point[i] = saved - epsilon;
    const double down = f(point);
    point[i] = saved;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

double GradReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

std::string GradReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(6) << std::scientific;
  for (const auto& g : groups)
    os << "group=" << g.name << " count=" << g.count << " max_rel_error=" << g.max_rel_error
       << " mean_rel_error=" << g.mean_rel_error << " epsilon=" << epsilon << " precision=" << precision_name(precision)
       << " pass=" << (g.passed ? 1 : 0) << '\n';
  os << "summary groups=" << groups.size() << " max_rel_error=" << max_rel_error() << " tolerance=" << tolerance
     << " seed=" << seed << " precision=" << precision_name(precision) << " pass=" << (passed ? 1 : 0) << '\n';
  return os.str();
}

GdaConfig gradcheck_toy_config() {
  GdaConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 8;
  cfg.ratio = 3;
  cfg.d_head = 4;
  cfg.n_kv = 2;
  cfg.max_seq_len = 8;
  return cfg;
}

namespace {

// Compares one tensor's analytic gradient with central differences of
// `loss`, perturbing the tensor in place.
template <typename T, typename Loss>
GradGroup check_group(const std::string& name, Tensor<T>& tensor, const Tensor<T>& analytic, double epsilon,
                      double tolerance, Loss&& loss) {
  std::vector<double> theta(tensor.values().begin(), tensor.values().end());
  const std::vector<T> saved = tensor.storage();
  auto f = [&](std::span<const double> point) {
    for (std::size_t i = 0; i < point.size(); ++i) tensor[i] = static_cast<T>(point[i]);
    const double value = loss();
    if (!std::isfinite(value)) throw NonFiniteError("finite difference of " + name, "loss is not finite");
    return value;
  };
  const std::vector<double> numeric = finite_diff(f, theta, epsilon);
  tensor.storage() = saved;

  GradGroup g;
  g.name = name;
  g.count = numeric.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    if (!std::isfinite(a)) throw NonFiniteError("analytic gradient of " + name, "element " + std::to_string(i));
    const double e = relative_error(a, numeric[i]);
    g.max_rel_error = std::max(g.max_rel_error, e);
    sum += e;
  }
  g.mean_rel_error = numeric.empty() ? 0.0 : sum / static_cast<double>(numeric.size());
  g.passed = g.max_rel_error <= tolerance;
  return g;
}

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double stddev, Rng& rng) {
  for (T& v : t.values()) v = static_cast<T>(mean + stddev * rng.normal());
}

template <typename T>
GradReport attention_gradcheck(const GdaConfig& cfg, std::uint64_t seed, double tolerance, double epsilon,
                               std::size_t n) {
  cfg.validate();
  if (n == 0 || n > cfg.max_seq_len) throw ConfigError("gradcheck sequence length must be in [1, max_seq_len]");
  Rng rng(seed);
  AttentionParams<T> params = AttentionParams<T>::zeros(cfg, static_cast<T>(lambda_init_default(2)));
  for (Tensor<T>* w : {&params.wq1, &params.wk1, &params.wq2, &params.wk2, &params.wv, &params.wo})
    fill_normal(*w, 0.0, 0.3, rng);
  for (Tensor<T>* w : {&params.lambda.q1, &params.lambda.k1, &params.lambda.q2, &params.lambda.k2})
    fill_normal(*w, 0.0, 0.3, rng);
  fill_normal(params.head_norm, 1.0, 0.2, rng);
  Tensor<T> x({n, cfg.d_model});
  Tensor<T> upstream({n, cfg.d_model});
  fill_normal(x, 0.0, 1.0, rng);
  fill_normal(upstream, 0.0, 1.0, rng);

  const AttentionGrads<T> grads = backward(x, params, cfg, upstream);
  auto loss = [&]() {
    const Tensor<T> out = gda_forward(x, params, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * upstream[i];
    return s;
  };

  GradReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  report.precision = precision_of<T>;
  report.seed = seed;
  const std::pair<const char*, std::pair<Tensor<T>*, const Tensor<T>*>> groups[] = {
      {"wq1", {&params.wq1, &grads.params.wq1}},
      {"wk1", {&params.wk1, &grads.params.wk1}},
      {"wq2", {&params.wq2, &grads.params.wq2}},
      {"wk2", {&params.wk2, &grads.params.wk2}},
      {"wv", {&params.wv, &grads.params.wv}},
      {"wo", {&params.wo, &grads.params.wo}},
      {"lambda_q1", {&params.lambda.q1, &grads.params.lambda.q1}},
      {"lambda_k1", {&params.lambda.k1, &grads.params.lambda.k1}},
      {"lambda_q2", {&params.lambda.q2, &grads.params.lambda.q2}},
      {"lambda_k2", {&params.lambda.k2, &grads.params.lambda.k2}},
      {"head_norm", {&params.head_norm, &grads.params.head_norm}},
      {"x", {&x, &grads.x}},
  };
  for (const auto& [name, pair] : groups)
    report.groups.push_back(check_group(name, *pair.first, *pair.second, epsilon, tolerance, loss));
  report.passed = std::all_of(report.groups.begin(), report.groups.end(), [](const GradGroup& g) { return g.passed; });
  return report;
}

template <typename T>
GradReport lm_gradcheck(const LmConfig& cfg, std::uint64_t seed, double tolerance, double epsilon, std::size_t n) {
  cfg.validate();
  if (n == 0 || n > cfg.gda.max_seq_len) throw ConfigError("gradcheck sequence length must be in [1, max_seq_len]");
  Rng rng(seed);
  LmParams<T> params = init_lm_params<T>(cfg, seed);
  // Weights larger than the training init.
  for (auto& ref : param_refs(params)) {
    if (ref.role == ParamRole::Weight) scale_inplace(*ref.tensor, T(10));
    if (ref.role == ParamRole::NoDecay)
      for (T& v : ref.tensor->values()) v += static_cast<T>(0.2 * rng.normal());
  }
  constexpr std::size_t n_seq = 2;
  std::vector<Token> windows(n_seq * (n + 1));
  for (Token& t : windows) t = static_cast<Token>(rng.below(cfg.vocab_size));

  LmParams<T> grads = zeros_like(params);
  lm_loss_and_grad<T>(windows, n_seq, cfg, params, &grads);
  auto loss = [&]() { return lm_loss_and_grad<T>(windows, n_seq, cfg, params, nullptr); };

  GradReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  report.precision = precision_of<T>;
  report.seed = seed;
  auto prefs = param_refs(params);
  auto grefs = param_refs(grads);
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    if (prefs[i].role == ParamRole::Fixed) continue;
    report.groups.push_back(check_group(prefs[i].name, *prefs[i].tensor, *grefs[i].tensor, epsilon, tolerance, loss));
  }
  report.passed = std::all_of(report.groups.begin(), report.groups.end(), [](const GradGroup& g) { return g.passed; });
  return report;
}

}  // namespace

GradReport run_gradcheck(const GdaConfig& cfg, std::uint64_t seed, double tolerance, double epsilon,
                         std::size_t seq_len) {
  return cfg.precision == Precision::F64 ? attention_gradcheck<double>(cfg, seed, tolerance, epsilon, seq_len)
                                         : attention_gradcheck<float>(cfg, seed, tolerance, epsilon, seq_len);
}

GradReport run_lm_gradcheck(const LmConfig& cfg, std::uint64_t seed, double tolerance, double epsilon,
                            std::size_t seq_len) {
  return cfg.gda.precision == Precision::F64 ? lm_gradcheck<double>(cfg, seed, tolerance, epsilon, seq_len)
                                             : lm_gradcheck<float>(cfg, seed, tolerance, epsilon, seq_len);
}

template AttentionGrads<float> backward<float>(const Tensor<float>&, const AttentionParams<float>&, const GdaConfig&,
                                               const Tensor<float>&);
template AttentionGrads<double> backward<double>(const Tensor<double>&, const AttentionParams<double>&,
                                                 const GdaConfig&, const Tensor<double>&);

}  // namespace gda
