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

#include "gda/checkpoint.hpp"

namespace gda {

/// Width expansion of a checkpoint.
///
/// The hidden axis grows by `hidden_factor` (n): activations become n
/// concatenated copies of the source activations. Signal heads grow by
/// `signal_factor` (r) and noise heads by `noise_factor` (q); the head width
/// is unchanged. Target signal head t copies source head t mod S, target
/// noise head j copies j mod h, and target KV unit w copies `kv_source[w]`.
struct GrowthPlan {
  LmConfig source;
  LmConfig target;
  std::size_t hidden_factor = 1;
  std::size_t signal_factor = 1;
  std::size_t noise_factor = 1;
  std::vector<std::vector<std::size_t>> clone_layout;  // source signal head -> target signal heads
  std::vector<std::size_t> noise_source;               // target noise head -> source noise head
  std::vector<std::size_t> kv_source;                  // target KV unit -> source KV unit

  bool is_identity() const;
  /// Target signal head -> source signal head, derived from clone_layout.
  std::vector<std::size_t> signal_source() const;
  std::string describe() const;
};

/// General plan. `target_kv` 0 selects signal_factor * n_kv, the only KV
/// count for which the GQA partnership survives the clone layout.
GrowthPlan plan_growth(const LmConfig& source, std::size_t hidden_factor, std::size_t signal_factor,
                       std::size_t noise_factor, std::size_t target_kv = 0);

/// Uniform HyperCloning: every axis grows by n.
GrowthPlan plan_hyperclone(const LmConfig& source, std::size_t n);

/// Group-differentiated growth: hidden axis by n, signal heads by
/// target_ratio / ratio, noise heads unchanged.
GrowthPlan plan_group_diff(const LmConfig& source, std::size_t n, std::size_t target_ratio);

/// Throws PlanError unless the plan's shapes agree and every clone keeps its
/// source head's noise and KV partners.
void validate_plan(const GrowthPlan& plan);

struct GrowthOptions {
  bool scale_hidden = true;      // 1/n on tiled input rows; false only for negative tests
  bool scale_clones = true;      // 1/r on cloned output rows; false only for negative tests
  double clone_noise_std = 0.0;  // Gaussian noise added to cloned query columns
  std::uint64_t noise_seed = 0;
};

/// W [din x dout] -> [(n_in*din) x (n_out*dout)], the block tiling of W / n_in.
template <typename T>
Tensor<T> hyperclone_linear(const Tensor<T>& w, std::size_t n_in, std::size_t n_out, bool scale = true);

/// Applies a validated plan. Tied embeddings are untied when the hidden axis
/// grows.
/// Optimiser state is dropped unless the plan is the identity.
Checkpoint apply_growth(const Checkpoint& source, const GrowthPlan& plan, const GrowthOptions& options = {});

Checkpoint hyperclone_model(const Checkpoint& source, std::size_t n, const GrowthOptions& options = {});
Checkpoint group_diff_grow(const Checkpoint& source, const GrowthPlan& plan, const GrowthOptions& options = {});

// ---- audits ------------------------------------------------------------------

struct PreservationReport {
  std::size_t n_samples = 0;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  double max_abs_logit_diff = 0.0;
  /// Per layer, max |residual difference| with the wider stream compared
  /// block-wise against the narrower one. Empty if the widths are not an
  /// integer multiple of each other.
  std::vector<double> layer_max_diff;
  /// Max |map difference| between each cloned signal head and its source,
  /// or negative when no plan was given.
  double clone_map_max_diff = -1.0;
  bool passed = false;

  /// First layer whose drift exceeds the tolerance, or layer count if none.
  std::size_t first_drift_layer() const;
  std::string to_text() const;
};

/// Compares two checkpoints on `n_samples` random token sequences of length
/// `seq_len` (0: min(16, max_seq_len)). Pure; deterministic in `seed`.
/// Passes when the max logit difference is <= tol.
PreservationReport verify_preservation(const Checkpoint& a, const Checkpoint& b, std::size_t n_samples,
                                       std::uint64_t seed, double tol, std::size_t seq_len = 0);

/// Same, plus the clone map audit for a checkpoint grown with `plan`.
PreservationReport verify_growth(const Checkpoint& source, const Checkpoint& grown, const GrowthPlan& plan,
                                 std::size_t n_samples, std::uint64_t seed, double tol, std::size_t seq_len = 0);

}  // namespace gda
