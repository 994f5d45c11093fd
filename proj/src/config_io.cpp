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

#include "gda/config_io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace gda {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " + expected);
}

}  // namespace

KeyValueText KeyValueText::parse(std::string_view text, const std::string& source) {
  KeyValueText out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw FormatError(source + ":" + std::to_string(line_no) + ": empty key");
    if (out.contains(key)) throw FormatError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    out.entries_.emplace_back(key, value);
  }
  return out;
}

std::optional<std::string> KeyValueText::get(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) bad_value(key, value, "an unsigned integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty() || !std::isfinite(out))
    bad_value(key, value, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

Precision parse_precision(std::string_view key, std::string_view value) {
  if (value == "f32") return Precision::F32;
  if (value == "f64") return Precision::F64;
  bad_value(key, value, "a precision (f32/f64)");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

const std::vector<std::string>& lm_config_keys() {
  static const std::vector<std::string> keys = {
      "d_model",     "n_layers",    "n_heads",          "ratio",          "d_head",
      "n_kv",        "rope_theta",  "max_seq_len",      "lambda_init_mode", "lambda_init",
      "lambda_vector_std", "precision", "vocab_size",   "mlp_hidden",     "tie_embeddings"};
  return keys;
}

std::string format_lm_config(const LmConfig& cfg) {
  const GdaConfig& g = cfg.gda;
  std::ostringstream os;
  os << "d_model = " << g.d_model << '\n'
     << "n_layers = " << g.n_layers << '\n'
     << "n_heads = " << g.n_heads << '\n'
     << "ratio = " << g.ratio << '\n'
     << "d_head = " << g.d_head << '\n'
     << "n_kv = " << g.n_kv << '\n'
     << "rope_theta = " << format_double(g.rope_theta) << '\n'
     << "max_seq_len = " << g.max_seq_len << '\n'
     << "lambda_init_mode = " << (g.lambda_init_mode == LambdaInitMode::Fixed ? "fixed" : "schedule") << '\n'
     << "lambda_init = " << format_double(g.lambda_init_value) << '\n'
     << "lambda_vector_std = " << format_double(g.lambda_vector_std) << '\n'
     << "precision = " << precision_name(g.precision) << '\n'
     << "vocab_size = " << cfg.vocab_size << '\n'
     << "mlp_hidden = " << cfg.resolved_mlp_hidden() << '\n'
     << "tie_embeddings = " << (cfg.tie_embeddings ? "true" : "false") << '\n';
  return os.str();
}

bool apply_lm_config_key(LmConfig& cfg, std::string_view key, std::string_view value) {
  GdaConfig& g = cfg.gda;
  if (key == "d_model") g.d_model = parse_size(key, value);
  else if (key == "n_layers") g.n_layers = parse_size(key, value);
  else if (key == "n_heads") g.n_heads = parse_size(key, value);
  else if (key == "ratio") g.ratio = parse_size(key, value);
  else if (key == "d_head") g.d_head = parse_size(key, value);
  else if (key == "n_kv") g.n_kv = parse_size(key, value);
  else if (key == "rope_theta") g.rope_theta = parse_double(key, value);
  else if (key == "max_seq_len") g.max_seq_len = parse_size(key, value);
  else if (key == "lambda_init_mode") {
    if (value == "schedule") g.lambda_init_mode = LambdaInitMode::Schedule;
    else if (value == "fixed") g.lambda_init_mode = LambdaInitMode::Fixed;
    else bad_value(key, value, "'schedule' or 'fixed'");
  } else if (key == "lambda_init") g.lambda_init_value = parse_double(key, value);
  else if (key == "lambda_vector_std") g.lambda_vector_std = parse_double(key, value);
  else if (key == "precision") g.precision = parse_precision(key, value);
  else if (key == "vocab_size") cfg.vocab_size = parse_size(key, value);
  else if (key == "mlp_hidden") cfg.mlp_hidden = parse_size(key, value);
  else if (key == "tie_embeddings") cfg.tie_embeddings = parse_bool(key, value);
  else return false;
  return true;
}

const std::vector<std::string>& required_model_keys() {
  static const std::vector<std::string> keys = {"d_model", "n_layers", "n_heads", "ratio", "d_head", "n_kv"};
  return keys;
}

LmConfig parse_lm_config(std::string_view text, const std::string& source) {
  const KeyValueText kv = KeyValueText::parse(text, source);
  for (const auto& key : required_model_keys())
    if (!kv.contains(key)) throw ConfigError(source + ": missing required key '" + key + "'");
  LmConfig cfg;
  for (const auto& [key, value] : kv.entries())
    if (!apply_lm_config_key(cfg, key, value)) throw ConfigError(source + ": unknown key '" + key + "'");
  cfg.validate();
  return cfg;
}

}  // namespace gda
