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

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gda/lm.hpp"

namespace gda {

/// Flat UTF-8 `key = value` text. Blank lines and lines starting with '#'
/// are ignored; duplicate keys are errors.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text, const std::string& source);

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  std::optional<std::string> get(std::string_view key) const;
  bool contains(std::string_view key) const { return get(key).has_value(); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Typed value parsing; each throws ConfigError naming the key on bad input.
std::size_t parse_size(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
double parse_double(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);
Precision parse_precision(std::string_view key, std::string_view value);

/// Round-trippable text for a double (shortest representation that parses
/// back to the same value).
std::string format_double(double v);

/// Names of the LmConfig keys, in the order format_lm_config writes them.
const std::vector<std::string>& lm_config_keys();

/// Writes every LmConfig field as `key = value` lines.
std::string format_lm_config(const LmConfig& cfg);

/// Applies one LmConfig key. Returns false if `key` is not an LmConfig key.
bool apply_lm_config_key(LmConfig& cfg, std::string_view key, std::string_view value);

/// Structural keys every model config must state.
const std::vector<std::string>& required_model_keys();

/// Parses a model-only config. Missing structural keys and unknown keys are ConfigErrors.
LmConfig parse_lm_config(std::string_view text, const std::string& source);

}  // namespace gda
