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
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gda/checkpoint.hpp"
#include "gda/lm.hpp"

namespace gda {

struct TrainConfig {
  double peak_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double adam_eps = 1e-8;
  double warmup_frac = 0.05;
  double decay_frac = 0.10;
  std::size_t total_steps = 1000;
  std::size_t batch_sequences = 16;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;        // 0 disables clipping
  std::size_t eval_every = 0;    // 0: evaluate only after the last step
  std::size_t eval_windows = 64; // held-out windows per evaluation
  std::size_t checkpoint_every = 0;
  double heldout_frac = 0.05;
  bool log_timing = true;        // false writes zero timing fields
  Precision precision = Precision::F32;

  void validate() const;
};

// ---- schedule and optimiser --------------------------------------------------

/// Warmup-stable-decay: peak * min(1, step / W, (total - step) / D) with
/// W = round(warmup_frac * total) and D = round(decay_frac * total).
double wsd_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// One AdamW update of a flat tensor. `t` is the 1-based update count.
template <typename T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  double lr, const TrainConfig& cfg, bool decay);

template <typename T>
struct AdamState {
  LmParams<T> m, v;
  std::uint64_t step = 0;  // updates applied so far
};

template <typename T>
AdamState<T> adam_init(const LmParams<T>& params);

/// Updates every non-fixed tensor. Weight decay skips lambda vectors and
/// norm gains.
template <typename T>
void adamw_step(LmParams<T>& params, const LmParams<T>& grads, AdamState<T>& state, double lr, const TrainConfig& cfg);

/// Global L2 norm over all gradient tensors, accumulated in 64-bit.
template <typename T>
double grad_norm(const LmParams<T>& grads);

/// Rescales `grads` so the global norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(LmParams<T>& grads, double max_norm);

// ---- corpus ------------------------------------------------------------------

enum class DocumentSplit {
  PerFile,     // each file is one document
  BlankLines,  // paragraphs separated by empty lines are documents
};

/// Token stream cut into windows of seq_len + 1 tokens with stride seq_len.
/// The last heldout windows are reserved for evaluation.
class CorpusStream {
 public:
  CorpusStream(std::vector<std::string> sources, std::vector<Token> tokens, std::size_t seq_len,
               double heldout_frac);

  const std::vector<std::string>& sources() const noexcept { return sources_; }
  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t window_len() const noexcept { return seq_len_ + 1; }
  std::size_t train_windows() const noexcept { return train_windows_; }
  std::size_t heldout_windows() const noexcept { return heldout_windows_; }

  std::span<const Token> window(std::size_t i) const;
  std::span<const Token> heldout_window(std::size_t i) const { return window(train_windows_ + i); }

  /// Window indices used at training step `step`: windows are visited in a
  /// per-epoch shuffled order seeded by (seed, epoch).
  std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch, std::uint64_t seed) const;

  /// Concatenated windows for `batch_indices`.
  std::vector<Token> batch(std::size_t step, std::size_t batch, std::uint64_t seed) const;

  /// First `count` held-out windows (all of them if count is 0 or larger).
  std::vector<Token> heldout_slice(std::size_t count) const;

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch, std::uint64_t seed) const;

  std::vector<std::string> sources_;
  std::vector<Token> tokens_;
  std::size_t seq_len_;
  std::size_t train_windows_ = 0;
  std::size_t heldout_windows_ = 0;
  mutable std::size_t cached_epoch_ = SIZE_MAX;
  mutable std::uint64_t cached_seed_ = 0;
  mutable std::vector<std::size_t> cached_order_;
};

/// Tokenises files as BOS + bytes + EOS per document.
std::vector<Token> tokenize_documents(std::string_view bytes, DocumentSplit split);

CorpusStream ingest(const std::vector<std::filesystem::path>& paths, std::size_t seq_len, double heldout_frac,
                    DocumentSplit split = DocumentSplit::PerFile);

// ---- evaluation --------------------------------------------------------------

/// Mean next-token loss over equal-length windows stacked in `windows`.
template <typename T>
double mean_nll(const LmConfig& cfg, const LmParams<T>& params, std::span<const Token> windows,
                std::size_t window_len);

/// exp(mean teacher-forced next-token loss) over the windows.
double eval_perplexity(const Checkpoint& ckpt, std::span<const Token> windows, std::size_t window_len);

// ---- training loop -----------------------------------------------------------

struct StepRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double tokens_per_sec = 0.0;
  double wall_ms = 0.0;

  std::string to_line() const;
};

struct EvalRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double perplexity = 0.0;

  std::string to_line() const;
};

/// Thrown when the loss or gradient becomes non-finite. The parameters from
/// before the failing step are saved to `checkpoint_path()`.
class TrainAbort : public NonFiniteError {
 public:
  TrainAbort(std::uint64_t step, const std::string& detail, std::filesystem::path checkpoint_path)
      : NonFiniteError("training step " + std::to_string(step), detail), step_(step),
        path_(std::move(checkpoint_path)) {}
  std::uint64_t step() const noexcept { return step_; }
  const std::filesystem::path& checkpoint_path() const noexcept { return path_; }

 private:
  std::uint64_t step_;
  std::filesystem::path path_;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::size_t stop_at = 0;        // nonzero: stop after this many total steps
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;  // parameters and optimiser state after the last step
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::filesystem::path final_path;  // empty when out_dir is empty
};

/// Runs from `start.step` up to cfg.total_steps (or options.stop_at). The
/// result checkpoint carries the optimiser moments as `optim.m.<name>` and
/// `optim.v.<name>`, so passing it back in resumes the run exactly.
TrainResult train(const Checkpoint& start, const CorpusStream& corpus, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// Fresh checkpoint at step 0.
Checkpoint init_checkpoint(const LmConfig& cfg, std::uint64_t seed);

// ---- config files ------------------------------------------------------------

struct TrainSetup {
  LmConfig model;
  TrainConfig train;
  std::vector<std::filesystem::path> corpus;
  DocumentSplit split = DocumentSplit::PerFile;
};

/// Parses a flat `key = value` config. Every LmConfig and TrainConfig field
/// is addressable; `corpus` is a comma-separated list resolved against
/// `base_dir`. `precision` sets both model and training precision. Unknown
/// keys and missing required keys throw ConfigError naming the key. The
/// model keys are only required when `require_model` is set.
TrainSetup parse_train_setup(std::string_view text, const std::string& source,
                             const std::filesystem::path& base_dir, bool require_model = true);

TrainSetup load_train_setup(const std::filesystem::path& path, bool require_model = true);

/// Keys parse_train_setup requires.
std::vector<std::string> required_train_keys(bool require_model);

}  // namespace gda
