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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gda/attention.hpp"
#include "gda/lm.hpp"

namespace gda {

/// Analytic gradients of <upstream, gda_forward(x)>.
template <typename T>
struct AttentionGrads {
  Tensor<T> x;
  AttentionParams<T> params;  // lambda.init is always zero (fixed offset)
};

template <typename T>
AttentionGrads<T> backward(const Tensor<T>& x, const AttentionParams<T>& params, const GdaConfig& cfg,
                           const Tensor<T>& upstream);

/// Central differences (f(theta + eps e_i) - f(theta - eps e_i)) / 2 eps for
/// every coordinate.
std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> theta, double epsilon);

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

struct GradGroup {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  bool passed = false;
};

struct GradReport {
  std::vector<GradGroup> groups;
  double epsilon = 0.0;
  double tolerance = 0.0;
  Precision precision = Precision::F64;
  std::uint64_t seed = 0;
  bool passed = false;

  double max_rel_error() const;
  /// One `key=value` line per group followed by a `summary` line.
  std::string to_text() const;
};

inline constexpr double kGradcheckEpsilon = 1e-5;

/// Toy attention shape used for certification: d_model 16, 8 heads at 3:1
/// (6 signal, 2 noise), head width 4, 2 KV units.
GdaConfig gradcheck_toy_config();
inline constexpr std::size_t kGradcheckSeqLen = 6;

/// Checks every attention parameter group, the lambda vectors, the per-head
/// gains and the input against finite differences. Runs in cfg.precision;
/// the finite differences are always taken in that precision too.
GradReport run_gradcheck(const GdaConfig& cfg, std::uint64_t seed, double tolerance,
                         double epsilon = kGradcheckEpsilon, std::size_t seq_len = kGradcheckSeqLen);

/// Same for the full language-model loss (embeddings, norms, MLP, attention).
GradReport run_lm_gradcheck(const LmConfig& cfg, std::uint64_t seed, double tolerance,
                            double epsilon = kGradcheckEpsilon, std::size_t seq_len = kGradcheckSeqLen);

}  // namespace gda
