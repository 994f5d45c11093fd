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
#include <optional>
#include <string>
#include <vector>

#include "gda/attention.hpp"
#include "gda/lm.hpp"

namespace gda {

/// Outcome of one toolkit command. `report` always ends with a line that
/// starts with "summary ".
struct CommandResult {
  std::string report;
  bool audit_failed = false;  // gradcheck or preservation audit did not pass
  std::vector<std::filesystem::path> files;
};

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  bool force_f64 = false;
  std::optional<double> tol;
};

/// Parses a file of LmConfig keys only; unknown keys are errors.
LmConfig load_model_config(const std::filesystem::path& path);

/// Head allocation table. Invalid ratios are listed with the reason.
CommandResult cmd_alloc(std::size_t heads, const std::vector<std::size_t>& ratios, const std::filesystem::path& out_dir);

/// Per-layer parameter and FLOP accounting for each ratio (empty list: every
/// ratio whose group count divides the head count).
CommandResult cmd_flops(const GdaConfig& base, const std::vector<std::size_t>& ratios, std::size_t seq_len,
                        const std::filesystem::path& out_dir);

CommandResult cmd_gradcheck(const GdaConfig& cfg, const CommandOptions& options, const std::filesystem::path& out_dir);

/// Trains from `ckpt_path` (resuming if it carries optimiser state) or from
/// a fresh initialisation when it is empty. Throws TrainAbort on a
/// non-finite loss.
CommandResult cmd_train(const std::filesystem::path& config_path, const std::filesystem::path& ckpt_path,
                        const std::filesystem::path& out_dir, const CommandOptions& options);

/// Perplexity on the held-out slice of the config's corpus, or on `input`.
CommandResult cmd_eval(const std::filesystem::path& ckpt_path, const std::filesystem::path& config_path,
                       const std::filesystem::path& input_path, const std::filesystem::path& out_dir);

/// Uniform hyperclone (target_ratio empty) or group-differentiated growth,
/// followed by the preservation audit. Writes grown.gda and audit.txt.
CommandResult cmd_grow(const std::filesystem::path& ckpt_path, const std::filesystem::path& out_dir,
                       std::size_t factor, std::optional<std::size_t> target_ratio, const CommandOptions& options);

/// Attention maps, lambda and row-sum summary for the text in `input_path`.
CommandResult cmd_inspect(const std::filesystem::path& ckpt_path, const std::filesystem::path& input_path,
                          const std::filesystem::path& out_dir);

}  // namespace gda
