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

#include "gda/commands.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "gda/checkpoint.hpp"
#include "gda/config_io.hpp"
#include "gda/gradcheck.hpp"
#include "gda/growth.hpp"
#include "gda/training.hpp"

namespace gda {

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot read ") + what + " '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
  return path;
}

// Aligned text and tab-separated renderings of one table.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string aligned() const {
    std::vector<std::size_t> width(header_.size());
    for (std::size_t c = 0; c < header_.size(); ++c) width[c] = header_[c].size();
    for (const auto& r : rows_)
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t c = 0; c < r.size(); ++c) {
        s += r[c];
        if (c + 1 < r.size()) s += std::string(width[c] - r[c].size() + 2, ' ');
      }
      os << s << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return os.str();
  }

  std::string tsv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "\t" : "") << r[c];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return os.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string num(std::uint64_t v) { return std::to_string(v); }

std::string ratio_label(std::size_t g) { return std::to_string(g) + ":1"; }

std::vector<Token> read_prompt_tokens(const fs::path& path) {
  const std::string text = read_file(path, "input");
  std::vector<Token> tokens{kBosToken};
  const auto body = ByteTokenizer::encode(text);
  tokens.insert(tokens.end(), body.begin(), body.end());
  return tokens;
}

}  // namespace

LmConfig load_model_config(const fs::path& path) {
  const KeyValueText kv = KeyValueText::parse(read_file(path, "config"), path.string());
  LmConfig cfg;
  for (const auto& [key, value] : kv.entries())
    if (!apply_lm_config_key(cfg, key, value)) throw ConfigError(path.string() + ": unknown key '" + key + "'");
  return cfg;
}

// ---- alloc / flops -------------------------------------------------------------

CommandResult cmd_alloc(std::size_t heads, const std::vector<std::size_t>& ratios, const fs::path& out_dir) {
  if (heads == 0) throw ConfigError("--heads must be >= 1");
  if (ratios.empty()) throw ConfigError("no ratios given");
  Table t({"ratio", "groups", "signal_heads", "noise_heads", "valid", "note"});
  std::size_t valid = 0;
  for (const auto& row : allocation_table(heads, ratios)) {
    valid += row.valid;
    t.add({ratio_label(row.ratio), num(row.ratio + 1), row.valid ? num(row.signal_heads) : "-",
           row.valid ? num(row.noise_heads) : "-", row.valid ? "yes" : "no", row.reason});
  }
  CommandResult res;
  res.report = "heads=" + num(heads) + "\n" + t.aligned() + "summary command=alloc heads=" + num(heads) +
               " rows=" + num(ratios.size()) + " valid=" + num(valid) + " invalid=" + num(ratios.size() - valid) + "\n";
  if (!out_dir.empty()) {
    res.files.push_back(write_file(out_dir, "alloc.txt", res.report));
    res.files.push_back(write_file(out_dir, "alloc.tsv", t.tsv()));
  }
  return res;
}

CommandResult cmd_flops(const GdaConfig& base, const std::vector<std::size_t>& ratios_in, std::size_t seq_len,
                        const fs::path& out_dir) {
  if (seq_len == 0) throw ConfigError("seq_len must be >= 1");
  std::vector<std::size_t> ratios = ratios_in;
  if (ratios.empty())
    for (std::size_t g = 1; g + 1 <= base.n_heads; ++g)
      if (base.n_heads % (g + 1) == 0) ratios.push_back(g);
  if (ratios.empty()) throw ConfigError("no valid ratio for " + num(base.n_heads) + " heads");

  Table t({"ratio", "signal", "noise", "kv", "attn_params", "proj_params", "score_maps", "score_flops",
           "value_products", "value_flops", "proj_flops", "total_flops", "note"});
  std::size_t valid = 0;
  std::set<std::uint64_t> map_counts;
  for (std::size_t g : ratios) {
    GdaConfig cfg = base;
    cfg.ratio = g;
    try {
      cfg.validate_allocation();
    } catch (const ConfigError& e) {
      t.add({ratio_label(g), "-", "-", "-", "-", "-", "-", "-", "-", "-", "-", "-", e.what()});
      continue;
    }
    ++valid;
    const ParamCount pc = param_count(cfg);
    const FlopsEstimate fe = flops_estimate(cfg, seq_len);
    map_counts.insert(fe.score_maps);
    const std::string note = cfg.signal_heads() % cfg.n_kv ? "n_kv does not divide signal heads" : "";
    t.add({ratio_label(g), num(cfg.signal_heads()), num(cfg.noise_heads()), num(cfg.n_kv), num(pc.total()),
           num(pc.projections()), num(fe.score_maps), num(fe.score_flops), num(fe.value_products),
           num(fe.value_flops), num(fe.projections() + fe.out_proj), num(fe.total()), note});
  }
  std::string maps;
  for (auto m : map_counts) maps += (maps.empty() ? "" : ",") + num(m);
  CommandResult res;
  res.report = "heads=" + num(base.n_heads) + " d_model=" + num(base.d_model) + " d_head=" + num(base.d_head) +
               " n_kv=" + num(base.n_kv) + " seq_len=" + num(seq_len) + " (per layer, one sequence)\n" + t.aligned() +
               "summary command=flops heads=" + num(base.n_heads) + " rows=" + num(ratios.size()) +
               " valid=" + num(valid) + " score_maps=" + (maps.empty() ? "-" : maps) + "\n";
  if (!out_dir.empty()) {
    res.files.push_back(write_file(out_dir, "flops.txt", res.report));
    res.files.push_back(write_file(out_dir, "flops.tsv", t.tsv()));
  }
  return res;
}

// ---- gradcheck -----------------------------------------------------------------

CommandResult cmd_gradcheck(const GdaConfig& cfg_in, const CommandOptions& options, const fs::path& out_dir) {
  GdaConfig cfg = cfg_in;
  if (options.force_f64) cfg.precision = Precision::F64;
  const GradReport rep = run_gradcheck(cfg, options.seed.value_or(0), options.tol.value_or(1e-4));
  CommandResult res;
  res.report = rep.to_text();
  res.audit_failed = !rep.passed;
  if (!out_dir.empty()) res.files.push_back(write_file(out_dir, "gradcheck.txt", res.report));
  return res;
}

// ---- train / eval --------------------------------------------------------------

CommandResult cmd_train(const fs::path& config_path, const fs::path& ckpt_path, const fs::path& out_dir,
                        const CommandOptions& options) {
  if (out_dir.empty()) throw ConfigError("train needs --out");
  const std::string text = read_file(config_path, "config");
  const bool resume = !ckpt_path.empty();
  TrainSetup setup = parse_train_setup(text, config_path.string(), config_path.parent_path(), !resume);
  if (options.seed) setup.train.seed = *options.seed;
  const KeyValueText kv = KeyValueText::parse(text, config_path.string());

  Checkpoint start;
  if (resume) {
    start = load_checkpoint(ckpt_path);
    // Model keys in the config must agree with the checkpoint.
    LmConfig merged = start.config;
    for (const auto& [key, value] : kv.entries())
      if (key != "precision" && key != "max_seq_len") apply_lm_config_key(merged, key, value);
    if (!(merged == start.config)) throw ConfigError(config_path.string() + ": model keys disagree with the checkpoint");
    const Precision p = start.config.gda.precision;
    if ((kv.contains("precision") && setup.train.precision != p) || (options.force_f64 && p != Precision::F64))
      throw ConfigError("requested precision does not match the checkpoint (" + std::string(precision_name(p)) + ")");
    setup.train.precision = p;
  } else {
    if (options.force_f64) setup.model.gda.precision = setup.train.precision = Precision::F64;
    start = init_checkpoint(setup.model, setup.train.seed);
  }

  const CorpusStream corpus = ingest(setup.corpus, setup.train.seq_len, setup.train.heldout_frac, setup.split);
  TrainOptions topt;
  topt.out_dir = out_dir;
  const TrainResult tr = train(start, corpus, setup.train, topt);

  double smoothed = 0.0;
  const std::size_t tail = std::min<std::size_t>(100, tr.steps.size());
  for (std::size_t i = tr.steps.size() - tail; i < tr.steps.size(); ++i) smoothed += tr.steps[i].loss;
  if (tail) smoothed /= static_cast<double>(tail);

  std::ostringstream os;
  os << "corpus_tokens=" << corpus.tokens().size() << " train_windows=" << corpus.train_windows()
     << " heldout_windows=" << corpus.heldout_windows() << " tokens_per_step="
     << setup.train.batch_sequences * setup.train.seq_len << '\n';
  for (const auto& e : tr.evals) os << e.to_line() << '\n';
  os << "summary command=train start_step=" << start.step << " end_step=" << tr.checkpoint.step
     << " steps=" << tr.steps.size();
  if (!tr.steps.empty())
    os << " first_loss=" << format_double(tr.steps.front().loss) << " last_loss=" << format_double(tr.steps.back().loss)
       << " smoothed_loss=" << format_double(smoothed);
  if (!tr.evals.empty()) os << " eval_perplexity=" << format_double(tr.evals.back().perplexity);
  os << " precision=" << precision_name(setup.train.precision) << " checkpoint=" << tr.final_path.string() << '\n';

  CommandResult res;
  res.report = os.str();
  res.files.push_back(out_dir / "metrics.log");
  if (!tr.evals.empty()) res.files.push_back(out_dir / "eval.log");
  res.files.push_back(tr.final_path);
  res.files.push_back(write_file(out_dir, "train_report.txt", res.report));
  return res;
}

CommandResult cmd_eval(const fs::path& ckpt_path, const fs::path& config_path, const fs::path& input_path,
                       const fs::path& out_dir) {
  if (config_path.empty() == input_path.empty()) throw ConfigError("eval needs exactly one of --config or --input");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::vector<Token> windows;
  std::size_t window_len = 0;
  std::string source;
  if (!config_path.empty()) {
    const TrainSetup setup = load_train_setup(config_path, false);
    const CorpusStream corpus = ingest(setup.corpus, setup.train.seq_len, setup.train.heldout_frac, setup.split);
    if (setup.train.seq_len > ckpt.config.gda.max_seq_len) throw ConfigError("seq_len exceeds the checkpoint's max_seq_len");
    if (corpus.heldout_windows() == 0) throw ConfigError("config leaves no held-out windows (heldout_frac)");
    windows = corpus.heldout_slice(setup.train.eval_windows);
    window_len = corpus.window_len();
    source = "heldout";
  } else {
    const std::vector<Token> tokens = ByteTokenizer::encode_document(read_file(input_path, "input"));
    const std::size_t len = std::min(ckpt.config.gda.max_seq_len, tokens.size() - 1);
    for (std::size_t start = 0; start + len + 1 <= tokens.size(); start += len)
      windows.insert(windows.end(), tokens.begin() + start, tokens.begin() + start + len + 1);
    window_len = len + 1;
    source = "input";
  }
  const double ppl = eval_perplexity(ckpt, windows, window_len);
  std::ostringstream os;
  os << "summary command=eval source=" << source << " windows=" << windows.size() / window_len
     << " tokens=" << windows.size() / window_len * (window_len - 1) << " loss=" << format_double(std::log(ppl))
     << " perplexity=" << format_double(ppl) << " step=" << ckpt.step << '\n';
  CommandResult res;
  res.report = os.str();
  if (!out_dir.empty()) res.files.push_back(write_file(out_dir, "eval_report.txt", res.report));
  return res;
}

// ---- grow ----------------------------------------------------------------------

CommandResult cmd_grow(const fs::path& ckpt_path, const fs::path& out_dir, std::size_t factor,
                       std::optional<std::size_t> target_ratio, const CommandOptions& options) {
  if (out_dir.empty()) throw ConfigError("grow needs --out");
  const Checkpoint source = load_checkpoint(ckpt_path);
  const GrowthPlan plan = target_ratio ? plan_group_diff(source.config, factor, *target_ratio)
                                       : plan_hyperclone(source.config, factor);
  validate_plan(plan);
  const Checkpoint grown = apply_growth(source, plan);
  const double tol = options.tol.value_or(source.config.gda.precision == Precision::F64 ? 1e-9 : 1e-3);
  const PreservationReport audit = verify_growth(source, grown, plan, 20, options.seed.value_or(0), tol);

  CommandResult res;
  res.report = "plan " + plan.describe() + "\n" + audit.to_text();
  res.audit_failed = !audit.passed;
  const fs::path out = out_dir / "grown.gda";
  fs::create_directories(out_dir);
  save_checkpoint(grown, out);
  res.files.push_back(out);
  res.files.push_back(write_file(out_dir, "audit.txt", res.report));
  return res;
}

// ---- inspect -------------------------------------------------------------------

namespace {

template <typename T>
CommandResult inspect_impl(const Checkpoint& ckpt, const std::vector<Token>& tokens, const fs::path& out_dir) {
  const LmConfig& cfg = ckpt.config;
  const LmParams<T> params = params_from_checkpoint<T>(ckpt);
  const auto maps = lm_attention_maps<T>(tokens, cfg, params);
  const std::size_t n = tokens.size();
  const fs::path map_dir = out_dir / "maps";
  if (!out_dir.empty()) fs::create_directories(map_dir);

  auto dump = [&](const std::string& name, const std::string& label, const std::vector<double>& m) {
    if (out_dir.empty()) return;
    std::ostringstream os;
    os << "# " << label << " rows=" << n << " cols=" << n << '\n';
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) os << (c ? " " : "") << format_double(m[r * n + c]);
      os << '\n';
    }
    write_file(map_dir, name, os.str());
  };

  std::ostringstream os;
  os << "tokens=" << n << " layers=" << cfg.gda.n_layers << " signal_heads=" << cfg.gda.signal_heads()
     << " noise_heads=" << cfg.gda.noise_heads() << '\n';
  double worst = 0.0;
  std::size_t min_reuse = SIZE_MAX, max_reuse = 0;
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const auto& M = maps[l];
    const double lambda = M.lambda;
    std::vector<std::size_t> reuse(M.noise.size(), 0);
    for (std::size_t j : M.noise_of_signal) ++reuse[j];
    double smin = INFINITY, smax = -INFINITY, ssum = 0.0;
    for (std::size_t i = 0; i < M.signal.size(); ++i) {
      const std::size_t j = M.noise_of_signal[i];
      std::vector<double> diff(n * n);
      for (std::size_t k = 0; k < n * n; ++k)
        diff[k] = static_cast<double>(M.signal[i][k]) - lambda * static_cast<double>(M.noise[j][k]);
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += diff[r * n + c];
        smin = std::min(smin, s);
        smax = std::max(smax, s);
        ssum += s;
        worst = std::max(worst, std::abs(s - (1.0 - lambda)));
      }
      const std::string tag = "layer" + std::to_string(l) + "_";
      dump(tag + "signal" + std::to_string(i) + ".txt",
           "layer=" + std::to_string(l) + " map=signal head=" + std::to_string(i),
           std::vector<double>(M.signal[i].values().begin(), M.signal[i].values().end()));
      dump(tag + "diff" + std::to_string(i) + ".txt",
           "layer=" + std::to_string(l) + " map=differential head=" + std::to_string(i) + " noise=" + std::to_string(j),
           diff);
    }
    for (std::size_t j = 0; j < M.noise.size(); ++j)
      dump("layer" + std::to_string(l) + "_noise" + std::to_string(j) + ".txt",
           "layer=" + std::to_string(l) + " map=noise head=" + std::to_string(j),
           std::vector<double>(M.noise[j].values().begin(), M.noise[j].values().end()));
    std::string reuse_text;
    for (std::size_t r : reuse) {
      reuse_text += (reuse_text.empty() ? "" : ",") + std::to_string(r);
      min_reuse = std::min(min_reuse, r);
      max_reuse = std::max(max_reuse, r);
    }
    os << "layer=" << l << " lambda=" << format_double(lambda) << " lambda_init=" << format_double(M.lambda_init)
       << " expected_row_sum=" << format_double(1.0 - lambda) << " diff_row_sum_min=" << format_double(smin)
       << " diff_row_sum_mean=" << format_double(ssum / static_cast<double>(M.signal.size() * n))
       << " diff_row_sum_max=" << format_double(smax) << " noise_reuse=" << reuse_text << '\n';
  }
  os << "summary command=inspect layers=" << maps.size() << " tokens=" << n
     << " max_row_sum_error=" << format_double(worst) << " noise_reuse_min=" << min_reuse
     << " noise_reuse_max=" << max_reuse << " ratio=" << cfg.gda.ratio << '\n';
  CommandResult res;
  res.report = os.str();
  if (!out_dir.empty()) {
    res.files.push_back(write_file(out_dir, "inspect.txt", res.report));
    res.files.push_back(map_dir);
  }
  return res;
}

}  // namespace

CommandResult cmd_inspect(const fs::path& ckpt_path, const fs::path& input_path, const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<Token> tokens = read_prompt_tokens(input_path);
  if (tokens.size() > ckpt.config.gda.max_seq_len)
    throw ConfigError("input is " + std::to_string(tokens.size()) + " tokens (with BOS); max_seq_len is " +
                      std::to_string(ckpt.config.gda.max_seq_len));
  if (ckpt.config.gda.precision == Precision::F32) return inspect_impl<float>(ckpt, tokens, out_dir);
  return inspect_impl<double>(ckpt, tokens, out_dir);
}

}  // namespace gda
