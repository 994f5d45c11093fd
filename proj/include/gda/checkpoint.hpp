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
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gda/lm.hpp"

namespace gda {

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

Precision precision_of_any(const AnyTensor& t);
const Shape& shape_of_any(const AnyTensor& t);

struct NamedTensor {
  std::string name;
  AnyTensor tensor;
};

/// In-memory image of a checkpoint file.
///
/// Layout on disk, all integers little-endian, no padding:
///   "GDA1" | u32 version | u32 header length | header text | u32 tensor count
///   then per tensor: u16 name length | name | u8 rank | u64 extents... |
///   u8 precision tag (4 or 8) | raw data
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  LmConfig config;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string provenance;  // one line, e.g. "init" or "hyperclone n=2 from ..."
  std::vector<NamedTensor> tensors;

  const AnyTensor* find(std::string_view name) const;
  AnyTensor* find(std::string_view name);
  /// Replaces an existing entry or appends a new one.
  void set(std::string name, AnyTensor tensor);
  bool erase(std::string_view name);

  /// Header text as written to disk.
  std::string header_text() const;

  /// Every architecture tensor present with the exact shape and the config
  /// precision. Extra entries (optimiser state) are allowed.
  void check_complete() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Architecture tensors of `params` under their registry names.
template <typename T>
Checkpoint make_checkpoint(const LmConfig& cfg, const LmParams<T>& params, std::uint64_t step, std::uint64_t seed,
                           std::string provenance);

/// Copies the architecture tensors back out. Throws FormatError if a tensor
/// is missing, mis-shaped, or stored in a different precision than T.
template <typename T>
LmParams<T> params_from_checkpoint(const Checkpoint& ckpt);

/// Writes `params` into an existing checkpoint, leaving other entries alone.
template <typename T>
void store_params(Checkpoint& ckpt, const LmParams<T>& params);

}  // namespace gda
