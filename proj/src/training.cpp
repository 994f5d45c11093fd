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

#include "gda/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gda/config_io.hpp"
#include "gda/rng.hpp"

namespace gda {

void TrainConfig::validate() const {
  if (!(peak_lr >= 0.0)) throw ConfigError("peak_lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(warmup_frac >= 0.0 && decay_frac >= 0.0 && warmup_frac + decay_frac <= 1.0))
    throw ConfigError("need 0 <= warmup_frac, decay_frac and warmup_frac + decay_frac <= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (batch_sequences < 1) throw ConfigError("batch_sequences must be >= 1");
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (!(heldout_frac >= 0.0 && heldout_frac < 1.0)) throw ConfigError("heldout_frac must be in [0, 1)");
}

// ---- schedule and optimiser --------------------------------------------------

double wsd_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps)
    throw IndexError("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const double total = static_cast<double>(total_steps);
  const double warm = std::round(cfg.warmup_frac * total);
  const double decay = std::round(cfg.decay_frac * total);
  const double s = static_cast<double>(step);
  double f = 1.0;
  if (warm > 0.0) f = std::min(f, s / warm);
  if (decay > 0.0) f = std::min(f, (total - s) / decay);
  return cfg.peak_lr * f;
}

template <typename T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  double lr, const TrainConfig& cfg, bool decay) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
    throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
  if (t < 1) throw ConfigError("adamw_update: update count starts at 1");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1, vhat = vi / c2;
    const double th = theta[i];
    theta[i] = static_cast<T>(th - lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + wd * th));
  }
}

template <typename T>
AdamState<T> adam_init(const LmParams<T>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

template <typename T>
void adamw_step(LmParams<T>& params, const LmParams<T>& grads, AdamState<T>& state, double lr,
                const TrainConfig& cfg) {
  auto p = param_refs(params);
  auto g = param_refs(grads);
  auto m = param_refs(state.m);
  auto v = param_refs(state.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw DimensionError("adamw_step: parameter, gradient and state layouts differ");
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].role == ParamRole::Fixed) continue;
    if (g[i].tensor->shape() != p[i].tensor->shape())
      throw DimensionError("adamw_step: gradient of '" + p[i].name + "' has shape " +
                           shape_string(g[i].tensor->shape()) + ", expected " + shape_string(p[i].tensor->shape()));
    adamw_update<T>(p[i].tensor->values(), g[i].tensor->values(), m[i].tensor->values(), v[i].tensor->values(),
                    state.step, lr, cfg, p[i].role == ParamRole::Weight);
  }
}

template <typename T>
double grad_norm(const LmParams<T>& grads) {
  double ss = 0.0;
  for (const auto& r : param_refs(grads)) {
    if (r.role == ParamRole::Fixed) continue;
    for (T x : r.tensor->values()) ss += static_cast<double>(x) * x;
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(LmParams<T>& grads, double max_norm) {
  const double norm = grad_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / (norm + 1e-6 * max_norm));
    for (auto& r : param_refs(grads))
      for (T& x : r.tensor->values()) x *= scale;
  }
  return norm;
}

// ---- corpus ------------------------------------------------------------------

CorpusStream::CorpusStream(std::vector<std::string> sources, std::vector<Token> tokens, std::size_t seq_len,
                           double heldout_frac)
    : sources_(std::move(sources)), tokens_(std::move(tokens)), seq_len_(seq_len) {
  if (seq_len_ < 1) throw ConfigError("seq_len must be >= 1");
  if (!(heldout_frac >= 0.0 && heldout_frac < 1.0)) throw ConfigError("heldout_frac must be in [0, 1)");
  const std::size_t need = seq_len_ + 1;
  if (tokens_.size() < need)
    throw FormatError("corpus has " + std::to_string(tokens_.size()) + " tokens; at least " + std::to_string(need) +
                      " (seq_len + 1) are needed for one window");
  const std::size_t total = (tokens_.size() - 1) / seq_len_;
  heldout_windows_ = static_cast<std::size_t>(std::floor(heldout_frac * static_cast<double>(total)));
  if (heldout_frac > 0.0 && heldout_windows_ == 0 && total >= 2) heldout_windows_ = 1;
  train_windows_ = total - heldout_windows_;
  if (train_windows_ == 0) throw FormatError("corpus too small: no training windows remain after the held-out split");
}

std::span<const Token> CorpusStream::window(std::size_t i) const {
  if (i >= train_windows_ + heldout_windows_) throw IndexError("window index " + std::to_string(i) + " out of range");
  return std::span<const Token>(tokens_).subspan(i * seq_len_, seq_len_ + 1);
}

std::vector<std::size_t> CorpusStream::epoch_order(std::size_t epoch, std::uint64_t seed) const {
  if (cached_epoch_ != epoch || cached_seed_ != seed) {
    Rng rng(mix_seed(seed, epoch));
    cached_order_ = rng.permutation(train_windows_);
    cached_epoch_ = epoch;
    cached_seed_ = seed;
  }
  return cached_order_;
}

std::vector<std::size_t> CorpusStream::batch_indices(std::size_t step, std::size_t batch, std::uint64_t seed) const {
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::vector<std::size_t> order;
  std::size_t order_epoch = SIZE_MAX;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t k = step * batch + b;
    const std::size_t epoch = k / train_windows_;
    if (epoch != order_epoch) {
      order = epoch_order(epoch, seed);
      order_epoch = epoch;
    }
    out.push_back(order[k % train_windows_]);
  }
  return out;
}

std::vector<Token> CorpusStream::batch(std::size_t step, std::size_t batch, std::uint64_t seed) const {
  std::vector<Token> out;
  out.reserve(batch * window_len());
  for (std::size_t i : batch_indices(step, batch, seed)) {
    auto w = window(i);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

std::vector<Token> CorpusStream::heldout_slice(std::size_t count) const {
  if (count == 0 || count > heldout_windows_) count = heldout_windows_;
  std::vector<Token> out;
  out.reserve(count * window_len());
  for (std::size_t i = 0; i < count; ++i) {
    auto w = heldout_window(i);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

std::vector<Token> tokenize_documents(std::string_view bytes, DocumentSplit split) {
  if (split == DocumentSplit::PerFile) return ByteTokenizer::encode_document(bytes);
  std::vector<Token> out;
  std::string doc;
  auto flush = [&] {
    if (doc.empty()) return;
    auto t = ByteTokenizer::encode_document(doc);
    out.insert(out.end(), t.begin(), t.end());
    doc.clear();
  };
  while (!bytes.empty()) {
    const auto nl = bytes.find('\n');
    std::string_view line = bytes.substr(0, nl == std::string_view::npos ? bytes.size() : nl + 1);
    bytes.remove_prefix(line.size());
    if (line.find_first_not_of(" \t\r\n") == std::string_view::npos) {
      flush();
    } else {
      doc += line;
    }
  }
  flush();
  return out;
}

CorpusStream ingest(const std::vector<std::filesystem::path>& paths, std::size_t seq_len, double heldout_frac,
                    DocumentSplit split) {
  if (paths.empty()) throw ConfigError("corpus: no input files");
  std::vector<std::string> sources;
  std::vector<Token> tokens;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus file '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for corpus file '" + path.string() + "'");
    auto t = tokenize_documents(bytes, split);
    tokens.insert(tokens.end(), t.begin(), t.end());
    sources.push_back(path.string());
  }
  return CorpusStream(std::move(sources), std::move(tokens), seq_len, heldout_frac);
}

// ---- evaluation --------------------------------------------------------------

template <typename T>
double mean_nll(const LmConfig& cfg, const LmParams<T>& params, std::span<const Token> windows,
                std::size_t window_len) {
  if (window_len < 2 || windows.empty() || windows.size() % window_len != 0)
    throw DimensionError("evaluation slice must be a nonempty stack of windows of at least two tokens");
  const std::size_t n = windows.size() / window_len;
  constexpr std::size_t kChunk = 16;
  double sum = 0.0;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    const double loss = lm_loss_and_grad<T>(windows.subspan(first * window_len, count * window_len), count, cfg,
                                            params, nullptr);
    sum += loss * static_cast<double>(count);
  }
  return sum / static_cast<double>(n);
}

double eval_perplexity(const Checkpoint& ckpt, std::span<const Token> windows, std::size_t window_len) {
  if (windows.empty()) throw ConfigError("eval_perplexity: empty slice");
  if (ckpt.config.gda.precision == Precision::F32)
    return std::exp(mean_nll(ckpt.config, params_from_checkpoint<float>(ckpt), windows, window_len));
  return std::exp(mean_nll(ckpt.config, params_from_checkpoint<double>(ckpt), windows, window_len));
}

// ---- training loop -----------------------------------------------------------

std::string StepRecord::to_line() const {
  std::ostringstream os;
  os << "step=" << step << " lr=" << format_double(lr) << " loss=" << format_double(loss)
     << " grad_norm=" << format_double(grad_norm) << " tokens_per_sec=" << format_double(tokens_per_sec)
     << " wall_ms=" << format_double(wall_ms);
  return os.str();
}

std::string EvalRecord::to_line() const {
  std::ostringstream os;
  os << "step=" << step << " eval_loss=" << format_double(loss) << " perplexity=" << format_double(perplexity);
  return os.str();
}

namespace {

const std::string kMomentPrefix[2] = {"optim.m.", "optim.v."};

template <typename T>
Checkpoint snapshot(const Checkpoint& start, const LmParams<T>& params, const AdamState<T>& state,
                    std::uint64_t step) {
  Checkpoint out;
  out.config = start.config;
  out.seed = start.seed;
  out.provenance = start.provenance;
  out.step = step;
  store_params(out, params);
  const LmParams<T>* moments[2] = {&state.m, &state.v};
  for (int k = 0; k < 2; ++k)
    for (const auto& r : param_refs(*moments[k]))
      if (r.role != ParamRole::Fixed) out.set(kMomentPrefix[k] + r.name, *r.tensor);
  return out;
}

template <typename T>
AdamState<T> restore_state(const Checkpoint& ckpt, const LmParams<T>& params) {
  AdamState<T> state = adam_init(params);
  LmParams<T>* moments[2] = {&state.m, &state.v};
  bool any = false, all = true;
  for (int k = 0; k < 2; ++k) {
    for (auto& r : param_refs(*moments[k])) {
      if (r.role == ParamRole::Fixed) continue;
      const AnyTensor* t = ckpt.find(kMomentPrefix[k] + r.name);
      if (!t) {
        all = false;
        continue;
      }
      any = true;
      const auto* typed = std::get_if<Tensor<T>>(t);
      if (!typed || typed->shape() != r.tensor->shape())
        throw FormatError("optimiser state '" + kMomentPrefix[k] + r.name + "' does not match its parameter");
      *r.tensor = *typed;
    }
  }
  if (any && !all) throw FormatError("checkpoint carries partial optimiser state");
  state.step = any ? ckpt.step : 0;
  return state;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to '" + path.string() + "'");
  out << line << '\n';
}

template <typename T>
TrainResult train_impl(const Checkpoint& start, const CorpusStream& corpus, const TrainConfig& cfg,
                       const TrainOptions& options) {
  const LmConfig& model = start.config;
  LmParams<T> params = params_from_checkpoint<T>(start);
  AdamState<T> state = restore_state(start, params);
  LmParams<T> grads = zeros_like(params);

  const std::size_t total = cfg.total_steps;
  const std::size_t end = options.stop_at ? std::min(options.stop_at, total) : total;
  const std::size_t B = cfg.batch_sequences;
  const bool write = !options.out_dir.empty();
  std::filesystem::path metrics, evals;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    metrics = options.out_dir / "metrics.log";
    evals = options.out_dir / "eval.log";
  }
  const std::vector<Token> heldout = corpus.heldout_windows() ? corpus.heldout_slice(cfg.eval_windows)
                                                               : std::vector<Token>{};

  TrainResult result;
  for (std::size_t s = start.step; s < end; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = wsd_lr(s, total, cfg);
    const std::vector<Token> batch = corpus.batch(s, B, cfg.seed);
    for (auto& r : param_refs(grads)) r.tensor->fill(T(0));
    const double loss = lm_loss_and_grad<T>(batch, B, model, params, &grads);
    const double norm = clip_grad_norm(grads, cfg.grad_clip);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      std::filesystem::path path;
      if (write) {
        path = options.out_dir / "last_good.gda";
        save_checkpoint(snapshot(start, params, state, s), path);
      }
      throw TrainAbort(s, "loss=" + format_double(loss) + " grad_norm=" + format_double(norm), path);
    }
    adamw_step(params, grads, state, lr, cfg);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    StepRecord rec{s, lr, loss, norm, 0.0, 0.0};
    if (cfg.log_timing) {
      rec.wall_ms = ms;
      rec.tokens_per_sec = ms > 0.0 ? static_cast<double>(B * cfg.seq_len) * 1000.0 / ms : 0.0;
    }
    result.steps.push_back(rec);
    if (write) append_line(metrics, rec.to_line());
    if (options.on_step) options.on_step(rec);

    const std::size_t done = s + 1;
    if (!heldout.empty() && ((cfg.eval_every && done % cfg.eval_every == 0) || done == total)) {
      const double el = mean_nll(model, params, heldout, corpus.window_len());
      EvalRecord er{done, el, std::exp(el)};
      result.evals.push_back(er);
      if (write) append_line(evals, er.to_line());
    }
    if (write && cfg.checkpoint_every && done % cfg.checkpoint_every == 0 && done != end)
      save_checkpoint(snapshot(start, params, state, done), options.out_dir / ("ckpt_step" + std::to_string(done) + ".gda"));
  }

  const std::size_t reached = std::max<std::size_t>(start.step, end);
  result.checkpoint = snapshot(start, params, state, reached);
  if (write) {
    result.final_path = options.out_dir / (reached == total ? std::string("final.gda")
                                                            : "ckpt_step" + std::to_string(reached) + ".gda");
    save_checkpoint(result.checkpoint, result.final_path);
  }
  return result;
}

}  // namespace

TrainResult train(const Checkpoint& start, const CorpusStream& corpus, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  start.check_complete();
  if (start.config.gda.precision != cfg.precision)
    throw ConfigError(std::string("training precision ") + precision_name(cfg.precision) +
                      " does not match checkpoint precision " + precision_name(start.config.gda.precision));
  if (corpus.seq_len() != cfg.seq_len) throw ConfigError("corpus windows were cut for a different seq_len");
  if (cfg.seq_len > start.config.gda.max_seq_len)
    throw ConfigError("seq_len " + std::to_string(cfg.seq_len) + " exceeds max_seq_len " +
                      std::to_string(start.config.gda.max_seq_len));
  if (start.step > cfg.total_steps)
    throw ConfigError("checkpoint step " + std::to_string(start.step) + " is past total_steps " +
                      std::to_string(cfg.total_steps));
  if (cfg.precision == Precision::F32) return train_impl<float>(start, corpus, cfg, options);
  return train_impl<double>(start, corpus, cfg, options);
}

Checkpoint init_checkpoint(const LmConfig& cfg, std::uint64_t seed) {
  const std::string prov = "init seed=" + std::to_string(seed);
  if (cfg.gda.precision == Precision::F32) return make_checkpoint(cfg, init_lm_params<float>(cfg, seed), 0, seed, prov);
  return make_checkpoint(cfg, init_lm_params<double>(cfg, seed), 0, seed, prov);
}

// ---- config files ------------------------------------------------------------

namespace {

const std::vector<std::string> kTrainRequired = {"total_steps", "batch_sequences", "seq_len", "corpus"};

bool apply_train_key(TrainConfig& t, std::string_view key, std::string_view value) {
  if (key == "peak_lr") t.peak_lr = parse_double(key, value);
  else if (key == "beta1") t.beta1 = parse_double(key, value);
  else if (key == "beta2") t.beta2 = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "adam_eps") t.adam_eps = parse_double(key, value);
  else if (key == "warmup_frac") t.warmup_frac = parse_double(key, value);
  else if (key == "decay_frac") t.decay_frac = parse_double(key, value);
  else if (key == "total_steps") t.total_steps = parse_size(key, value);
  else if (key == "batch_sequences") t.batch_sequences = parse_size(key, value);
  else if (key == "seq_len") t.seq_len = parse_size(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "grad_clip") t.grad_clip = parse_double(key, value);
  else if (key == "eval_every") t.eval_every = parse_size(key, value);
  else if (key == "eval_windows") t.eval_windows = parse_size(key, value);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_size(key, value);
  else if (key == "heldout_frac") t.heldout_frac = parse_double(key, value);
  else if (key == "log_timing") t.log_timing = parse_bool(key, value);
  else return false;
  return true;
}

}  // namespace

std::vector<std::string> required_train_keys(bool require_model) {
  std::vector<std::string> keys;
  if (require_model) keys = required_model_keys();
  keys.insert(keys.end(), kTrainRequired.begin(), kTrainRequired.end());
  return keys;
}

TrainSetup parse_train_setup(std::string_view text, const std::string& source, const std::filesystem::path& base_dir,
                             bool require_model) {
  const KeyValueText kv = KeyValueText::parse(text, source);
  for (const auto& key : required_train_keys(require_model))
    if (!kv.contains(key)) throw ConfigError(source + ": missing required key '" + key + "'");

  TrainSetup setup;
  setup.model.gda.precision = Precision::F32;
  for (const auto& [key, value] : kv.entries()) {
    if (key == "precision") {
      setup.train.precision = parse_precision(key, value);
      setup.model.gda.precision = setup.train.precision;
    } else if (key == "corpus") {
      std::string_view rest = value;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        std::string item(rest.substr(0, comma));
        const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
        if (a != std::string::npos) {
          std::filesystem::path p = item.substr(a, b - a + 1);
          setup.corpus.push_back(p.is_absolute() ? p : base_dir / p);
        }
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      }
      if (setup.corpus.empty()) throw ConfigError(source + ": key 'corpus' lists no files");
    } else if (key == "document_split") {
      if (value == "file") setup.split = DocumentSplit::PerFile;
      else if (value == "blank_lines") setup.split = DocumentSplit::BlankLines;
      else throw ConfigError(source + ": key 'document_split' must be 'file' or 'blank_lines'");
    } else if (!apply_train_key(setup.train, key, value) && !apply_lm_config_key(setup.model, key, value)) {
      throw ConfigError(source + ": unknown key '" + key + "'");
    }
  }
  if (!kv.contains("max_seq_len")) setup.model.gda.max_seq_len = setup.train.seq_len;
  setup.train.validate();
  if (require_model) setup.model.validate();
  return setup;
}

TrainSetup load_train_setup(const std::filesystem::path& path, bool require_model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_train_setup(text, path.string(), path.parent_path(), require_model);
}

#define GDA_INSTANTIATE_TRAIN(T)                                                                                  \
  template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t,     \
                                double, const TrainConfig&, bool);                                                \
  template AdamState<T> adam_init<T>(const LmParams<T>&);                                                         \
  template void adamw_step<T>(LmParams<T>&, const LmParams<T>&, AdamState<T>&, double, const TrainConfig&);       \
  template double grad_norm<T>(const LmParams<T>&);                                                               \
  template double clip_grad_norm<T>(LmParams<T>&, double);                                                        \
  template double mean_nll<T>(const LmConfig&, const LmParams<T>&, std::span<const Token>, std::size_t);

GDA_INSTANTIATE_TRAIN(float)
GDA_INSTANTIATE_TRAIN(double)

}  // namespace gda
