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

#include "gda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gda/config_io.hpp"

namespace gda {

namespace {

constexpr char kMagic[4] = {'G', 'D', 'A', '1'};

class Writer {
 public:
  template <typename U>
  void put_uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void put_scalars(std::span<const T> values) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(values.data(), values.size_bytes());
    } else {
      for (T v : values) put_uint(std::bit_cast<U>(v));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U get_uint(const char* what) {
    auto s = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(s[i]) << (8 * i);
    return v;
  }
  template <typename T>
  std::vector<T> get_scalars(std::size_t count, const char* what) {
    if (count > (in_.size() - pos_) / sizeof(T))
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    std::vector<T> out(count);
    auto s = take(count * sizeof(T), what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), s.data(), s.size());
    } else {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (std::size_t i = 0; i < count; ++i) {
        U v = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<U>(s[i * sizeof(T) + b]) << (8 * b);
        out[i] = std::bit_cast<T>(v);
      }
    }
    return out;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

Precision precision_of_any(const AnyTensor& t) {
  return std::holds_alternative<Tensor<float>>(t) ? Precision::F32 : Precision::F64;
}

const Shape& shape_of_any(const AnyTensor& t) {
  return std::visit([](const auto& x) -> const Shape& { return x.shape(); }, t);
}

const AnyTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

AnyTensor* Checkpoint::find(std::string_view name) {
  for (auto& nt : tensors)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

void Checkpoint::set(std::string name, AnyTensor tensor) {
  if (AnyTensor* existing = find(name)) {
    *existing = std::move(tensor);
    return;
  }
  tensors.push_back({std::move(name), std::move(tensor)});
}

bool Checkpoint::erase(std::string_view name) {
  for (auto it = tensors.begin(); it != tensors.end(); ++it) {
    if (it->name == name) {
      tensors.erase(it);
      return true;
    }
  }
  return false;
}

std::string Checkpoint::header_text() const {
  if (provenance.find('\n') != std::string::npos) throw FormatError("provenance must be a single line");
  std::string text = format_lm_config(config);
  text += "step = " + std::to_string(step) + "\n";
  text += "seed = " + std::to_string(seed) + "\n";
  text += "provenance = " + provenance + "\n";
  return text;
}

void Checkpoint::check_complete() const {
  config.validate();
  const Precision want = config.gda.precision;
  for (const auto& spec : param_specs(config)) {
    const AnyTensor* t = find(spec.name);
    if (!t) throw FormatError("checkpoint is missing tensor '" + spec.name + "'");
    if (shape_of_any(*t) != spec.shape)
      throw FormatError("tensor '" + spec.name + "' has shape " + shape_string(shape_of_any(*t)) + ", expected " +
                        shape_string(spec.shape));
    if (precision_of_any(*t) != want)
      throw FormatError("tensor '" + spec.name + "' is " + precision_name(precision_of_any(*t)) +
                        " but the config says " + precision_name(want));
  }
  if (config.tie_embeddings && find("lm_head"))
    throw FormatError("tied checkpoint must not carry an lm_head tensor");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put_uint<std::uint32_t>(ckpt.format_version);
  const std::string header = ckpt.header_text();
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
  w.put_bytes(header.data(), header.size());
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& nt : ckpt.tensors) {
    if (nt.name.empty() || nt.name.size() > UINT16_MAX) throw FormatError("bad tensor name length: '" + nt.name + "'");
    const Shape& shape = shape_of_any(nt.tensor);
    if (shape.empty() || shape.size() > UINT8_MAX) throw FormatError("bad rank for tensor '" + nt.name + "'");
    w.put_uint<std::uint16_t>(static_cast<std::uint16_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t e : shape) w.put_uint<std::uint64_t>(e);
    w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(precision_of_any(nt.tensor)));
    std::visit([&](const auto& t) { w.put_scalars(t.values()); }, nt.tensor);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a GDA checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.format_version = r.get_uint<std::uint32_t>("version");
  if (ckpt.format_version != Checkpoint::kFormatVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.format_version));
  const auto header_len = r.get_uint<std::uint32_t>("header length");
  auto header_bytes = r.take(header_len, "header");
  const std::string header(header_bytes.begin(), header_bytes.end());

  const KeyValueText kv = KeyValueText::parse(header, "checkpoint header");
  bool have_step = false, have_seed = false, have_prov = false;
  for (const auto& [key, value] : kv.entries()) {
    try {
      if (apply_lm_config_key(ckpt.config, key, value)) continue;
      if (key == "step") ckpt.step = parse_u64(key, value), have_step = true;
      else if (key == "seed") ckpt.seed = parse_u64(key, value), have_seed = true;
      else if (key == "provenance") ckpt.provenance = value, have_prov = true;
      else throw FormatError("unknown checkpoint header key '" + key + "'");
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint header: ") + e.what());
    }
  }
  for (const auto& key : lm_config_keys())
    if (!kv.contains(key)) throw FormatError("checkpoint header is missing '" + key + "'");
  if (!have_step || !have_seed || !have_prov) throw FormatError("checkpoint header is missing step/seed/provenance");

  const auto count = r.get_uint<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_uint<std::uint16_t>("name length");
    auto name_bytes = r.take(name_len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.get_uint<std::uint8_t>("rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      const auto ext = r.get_uint<std::uint64_t>("extent");
      if (ext == 0 || ext > bytes.size()) throw FormatError("tensor '" + name + "' has bad extent");
      e = static_cast<std::size_t>(ext);
      if (n > bytes.size() / e) throw FormatError("tensor '" + name + "' is larger than the file");
      n *= e;
    }
    const auto tag = r.get_uint<std::uint8_t>("precision tag");
    AnyTensor t;
    if (tag == 4) t = Tensor<float>(shape, r.get_scalars<float>(n, "tensor data"));
    else if (tag == 8) t = Tensor<double>(shape, r.get_scalars<double>(n, "tensor data"));
    else throw FormatError("tensor '" + name + "' has unknown precision tag " + std::to_string(tag));
    if (ckpt.find(name)) throw FormatError("duplicate tensor '" + name + "'");
    ckpt.tensors.push_back({std::move(name), std::move(t)});
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor table at byte " + std::to_string(r.pos()));
  ckpt.check_complete();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  // Atomic replace via rename.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
void store_params(Checkpoint& ckpt, const LmParams<T>& params) {
  for (const auto& ref : param_refs(params)) ckpt.set(ref.name, *ref.tensor);
}

template <typename T>
Checkpoint make_checkpoint(const LmConfig& cfg, const LmParams<T>& params, std::uint64_t step, std::uint64_t seed,
                           std::string provenance) {
  if (cfg.gda.precision != precision_of<T>)
    throw ConfigError(std::string("config precision ") + precision_name(cfg.gda.precision) +
                      " does not match parameter precision " + precision_name(precision_of<T>));
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.step = step;
  ckpt.seed = seed;
  ckpt.provenance = std::move(provenance);
  store_params(ckpt, params);
  ckpt.check_complete();
  return ckpt;
}

template <typename T>
LmParams<T> params_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.check_complete();
  if (ckpt.config.gda.precision != precision_of<T>)
    throw FormatError(std::string("checkpoint holds ") + precision_name(ckpt.config.gda.precision) + " tensors, " +
                      precision_name(precision_of<T>) + " requested");
  LmParams<T> params = zero_params<T>(ckpt.config);
  for (auto& ref : param_refs(params)) *ref.tensor = std::get<Tensor<T>>(*ckpt.find(ref.name));
  return params;
}

template Checkpoint make_checkpoint(const LmConfig&, const LmParams<float>&, std::uint64_t, std::uint64_t, std::string);
template Checkpoint make_checkpoint(const LmConfig&, const LmParams<double>&, std::uint64_t, std::uint64_t, std::string);
template LmParams<float> params_from_checkpoint(const Checkpoint&);
template LmParams<double> params_from_checkpoint(const Checkpoint&);
template void store_params(Checkpoint&, const LmParams<float>&);
template void store_params(Checkpoint&, const LmParams<double>&);

}  // namespace gda
