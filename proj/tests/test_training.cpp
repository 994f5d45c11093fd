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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "gda/training.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using gda::Token;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gda_test_training" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

gda::LmConfig small_lm(gda::Precision precision) {
  gda::LmConfig cfg;
  cfg.gda = testing::attention_config(16, 4, 1, 4, 2, 16);
  cfg.gda.n_layers = 1;
  cfg.gda.precision = precision;
  cfg.mlp_hidden = 32;
  return cfg;
}

gda::TrainConfig small_train(gda::Precision precision, std::size_t steps) {
  gda::TrainConfig t;
  t.total_steps = steps;
  t.batch_sequences = 4;
  t.seq_len = 16;
  t.peak_lr = 1e-2;
  t.seed = 3;
  t.eval_windows = 8;
  t.precision = precision;
  t.log_timing = false;
  return t;
}

gda::CorpusStream text_corpus(const std::string& text, std::size_t seq_len, double heldout = 0.1) {
  return gda::CorpusStream({"inline"}, gda::tokenize_documents(text, gda::DocumentSplit::BlankLines), seq_len, heldout);
}

std::string prose() {
  std::string s;
  const char* lines[] = {"In the beginning was the word.", "And the word was with the light.",
                         "The light shone in the dark, and the dark did not grasp it."};
  for (int i = 0; i < 40; ++i) {
    s += lines[i % 3];
    s += (i % 4 == 3) ? "\n\n" : "\n";
  }
  return s;
}

}  // namespace

TEST_CASE("wsd schedule examples") {
  gda::TrainConfig cfg;
  cfg.peak_lr = 5e-4;
  CHECK(gda::wsd_lr(25, 1000, cfg) == 0.5 * cfg.peak_lr);
  CHECK(gda::wsd_lr(500, 1000, cfg) == cfg.peak_lr);
  CHECK(gda::wsd_lr(950, 1000, cfg) == 0.5 * cfg.peak_lr);
  CHECK(gda::wsd_lr(0, 1000, cfg) == 0.0);
  CHECK(gda::wsd_lr(1, 1000, cfg) == cfg.peak_lr / 50);
  CHECK(gda::wsd_lr(999, 1000, cfg) == doctest::Approx(cfg.peak_lr / 100).epsilon(1e-14));
  CHECK_THROWS_AS(gda::wsd_lr(1000, 1000, cfg), gda::IndexError);
}

TEST_CASE("wsd schedule is continuous at phase boundaries") {
  gda::TrainConfig cfg;
  for (std::size_t total : {20, 100, 1000, 2000, 777}) {
    const double warm = std::round(cfg.warmup_frac * total), decay = std::round(cfg.decay_frac * total);
    const double bound = cfg.peak_lr / std::max(1.0, std::min(warm, decay)) + 1e-18;
    for (std::size_t s = 0; s + 1 < total; ++s) {
      const double a = gda::wsd_lr(s, total, cfg), b = gda::wsd_lr(s + 1, total, cfg);
      CHECK(a >= 0.0);
      CHECK(a <= cfg.peak_lr);
      CHECK(std::abs(a - b) <= bound);
    }
  }
}

TEST_CASE("train config validation") {
  gda::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup_frac = 0.95;
  CHECK_THROWS_AS(cfg.validate(), gda::ConfigError);
  cfg = {};
  cfg.total_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), gda::ConfigError);
}

TEST_CASE("adamw hand-derived first step") {
  gda::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta = {0.0}, g = {1.0}, m = {0.0}, v = {0.0};
  gda::adamw_update<double>(theta, g, m, v, 1, 0.1, cfg, true);
  CHECK(std::abs(theta[0] - (-0.1 / (1.0 + 1e-8))) <= 1e-10);
  CHECK(std::abs(theta[0] + 0.1) <= 1e-8);
  CHECK(m[0] == doctest::Approx(0.1));
  CHECK(v[0] == doctest::Approx(0.05));
}

TEST_CASE("adamw special cases") {
  gda::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta = {0.3, -1.2, 7.0}, zero = {0.0, 0.0, 0.0}, m = zero, v = zero;
  auto before = theta;
  gda::adamw_update<double>(theta, zero, m, v, 1, 0.1, cfg, true);
  CHECK(theta == before);

  cfg.weight_decay = 0.1;
  gda::adamw_update<double>(theta, zero, m, v, 2, 0.01, cfg, true);
  for (std::size_t i = 0; i < 3; ++i) CHECK(theta[i] == doctest::Approx(before[i] * (1.0 - 0.01 * 0.1)).epsilon(1e-15));
  before = theta;
  gda::adamw_update<double>(theta, zero, m, v, 3, 0.01, cfg, false);
  CHECK(theta == before);
}

TEST_CASE("adamw with a constant gradient takes bounded sign-consistent steps") {
  gda::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta = {1.0, -2.0}, g = {0.7, -3.0}, m = {0, 0}, v = {0, 0};
  const double lr = 1e-3;
  for (std::uint64_t t = 1; t <= 50; ++t) {
    const auto prev = theta;
    gda::adamw_update<double>(theta, g, m, v, t, lr, cfg, true);
    for (std::size_t i = 0; i < 2; ++i) {
      const double step = theta[i] - prev[i];
      CHECK(step * g[i] < 0.0);
      CHECK(std::abs(step) <= lr * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("adamw_step decays weights only") {
  const gda::LmConfig cfg = testing::toy_lm();
  auto params = gda::init_lm_params<double>(cfg, 1);
  const auto start = params;
  auto grads = gda::zeros_like(params);
  auto state = gda::adam_init(params);
  gda::TrainConfig tc;
  tc.weight_decay = 0.5;
  gda::adamw_step(params, grads, state, 0.1, tc);
  CHECK(state.step == 1);
  const auto before = gda::param_refs(start);
  const auto after = gda::param_refs(params);
  for (std::size_t i = 0; i < after.size(); ++i) {
    if (after[i].role == gda::ParamRole::Weight)
      CHECK(gda::max_abs_diff(*after[i].tensor, *before[i].tensor) > 0.0);
    else
      CHECK(*after[i].tensor == *before[i].tensor);
  }
}

TEST_CASE("gradient clipping") {
  const gda::LmConfig cfg = testing::toy_lm();
  gda::Rng rng(2);
  auto grads = gda::zeros_like(gda::init_lm_params<double>(cfg, 0));
  for (auto& r : gda::param_refs(grads))
    for (double& v : r.tensor->values()) v = rng.normal();
  const double before = gda::grad_norm(grads);
  CHECK(gda::clip_grad_norm(grads, 1.0) == before);
  CHECK(gda::grad_norm(grads) <= 1.0 + 1e-12);
  for (double max : {1e-3, 0.5, 3.0}) {
    gda::clip_grad_norm(grads, max);
    CHECK(gda::grad_norm(grads) <= max + 1e-12);
  }
  const auto kept = gda::param_refs(grads)[0].tensor->storage();
  gda::clip_grad_norm(grads, 1e6);
  CHECK(gda::param_refs(grads)[0].tensor->storage() == kept);
}

TEST_CASE("document tokenisation") {
  CHECK(gda::tokenize_documents("AB", gda::DocumentSplit::PerFile) == std::vector<Token>{256, 65, 66, 257});
  CHECK(gda::tokenize_documents("A\n\n\nB\n", gda::DocumentSplit::BlankLines) ==
        std::vector<Token>{256, 65, 10, 257, 256, 66, 10, 257});
}

TEST_CASE("corpus windows") {
  std::vector<Token> tokens(101);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<Token>(i % 250);
  const gda::CorpusStream c({"t"}, tokens, 10, 0.2);
  CHECK(c.train_windows() + c.heldout_windows() == 10);
  CHECK(c.heldout_windows() == 2);
  for (std::size_t w = 0; w < 10; ++w) {
    const auto span = c.window(w);
    REQUIRE(span.size() == 11);
    CHECK(span[0] == tokens[w * 10]);
  }
  CHECK_THROWS_AS(c.window(10), gda::IndexError);

  const auto a = c.batch(5, 3, 42), b = c.batch(5, 3, 42);
  CHECK(a == b);
  CHECK(a.size() == 33);
  for (std::size_t idx : c.batch_indices(5, 3, 42)) CHECK(idx < c.train_windows());
  // One epoch visits every training window once.
  std::vector<int> seen(c.train_windows(), 0);
  for (std::size_t s = 0; s < c.train_windows(); ++s)
    for (std::size_t idx : c.batch_indices(s, 1, 7)) ++seen[idx];
  for (int n : seen) CHECK(n == 1);
  CHECK(c.heldout_slice(0).size() == 22);
  CHECK(c.heldout_slice(1).size() == 11);
}

TEST_CASE("corpus too small names the minimum size") {
  CHECK_THROWS_WITH_AS(gda::CorpusStream({"t"}, std::vector<Token>(10, 1), 10, 0.0), doctest::Contains("11"),
                       gda::FormatError);
  CHECK_THROWS_AS(gda::CorpusStream({"t"}, {}, 4, 0.0), gda::FormatError);
}

TEST_CASE("ingest reads files") {
  const fs::path dir = scratch_dir("ingest");
  { std::ofstream(dir / "a.txt") << "AB"; }
  { std::ofstream(dir / "b.txt") << "CDE"; }
  const auto c = gda::ingest({dir / "a.txt", dir / "b.txt"}, 3, 0.0);
  CHECK(c.tokens() == std::vector<Token>{256, 65, 66, 257, 256, 67, 68, 69, 257});
  CHECK_THROWS_AS(gda::ingest({dir / "missing.txt"}, 3, 0.0), gda::IoError);
  { std::ofstream(dir / "empty.txt"); }
  CHECK_THROWS_AS(gda::ingest({dir / "empty.txt"}, 3, 0.0), gda::FormatError);
}

TEST_CASE("step records") {
  gda::StepRecord r{7, 0.25, 1.5, 0.75, 0.0, 0.0};
  CHECK(r.to_line() == "step=7 lr=0.25 loss=1.5 grad_norm=0.75 tokens_per_sec=0 wall_ms=0");
  gda::EvalRecord e{8, 2.0, std::exp(2.0)};
  CHECK(e.to_line().rfind("step=8 eval_loss=2 perplexity=", 0) == 0);
}

TEST_CASE("perplexity") {
  gda::LmConfig cfg = small_lm(gda::Precision::F64);
  cfg.tie_embeddings = false;
  auto params = gda::init_lm_params<double>(cfg, 0);
  params.lm_head.fill(0.0);
  const auto uniform = gda::make_checkpoint(cfg, params, 0, 0, "uniform");
  const auto corpus = text_corpus(prose(), 16);
  const auto slice = corpus.heldout_slice(0);
  CHECK(std::abs(gda::eval_perplexity(uniform, slice, 17) - 258.0) <= 1.0);

  const auto fresh = gda::init_checkpoint(small_lm(gda::Precision::F64), 1);
  const double nll = gda::mean_nll(fresh.config, gda::params_from_checkpoint<double>(fresh), slice, 17);
  CHECK(gda::eval_perplexity(fresh, slice, 17) == doctest::Approx(std::exp(nll)).epsilon(1e-14));
  CHECK_THROWS_AS(gda::eval_perplexity(fresh, std::vector<Token>{}, 17), gda::ConfigError);
}

TEST_CASE("training lowers the loss and is deterministic") {
  const auto corpus = text_corpus(prose(), 16);
  const auto cfg = small_train(gda::Precision::F64, 60);
  const auto start = gda::init_checkpoint(small_lm(gda::Precision::F64), 5);
  const auto a = gda::train(start, corpus, cfg);
  const auto b = gda::train(start, corpus, cfg);
  CHECK(gda::encode_checkpoint(a.checkpoint) == gda::encode_checkpoint(b.checkpoint));
  REQUIRE(a.steps.size() == 60);
  CHECK(std::abs(a.steps[0].loss - std::log(258.0)) <= 0.2);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += a.steps[i].loss;
    last += a.steps[50 + i].loss;
  }
  CHECK(last < first);
  CHECK(a.checkpoint.step == 60);
  REQUIRE(a.evals.size() == 1);
  const auto train_slice = corpus.batch(0, 4, 99);
  CHECK(gda::eval_perplexity(a.checkpoint, train_slice, 17) < gda::eval_perplexity(start, train_slice, 17));
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const auto corpus = text_corpus(prose(), 16);
  auto cfg = small_train(gda::Precision::F64, 30);
  cfg.checkpoint_every = 10;
  const auto start = gda::init_checkpoint(small_lm(gda::Precision::F64), 6);
  const fs::path full_dir = scratch_dir("full"), part_dir = scratch_dir("part");
  const auto full = gda::train(start, corpus, cfg, {full_dir, 0, {}});
  CHECK(fs::exists(full_dir / "ckpt_step10.gda"));
  CHECK(fs::exists(full_dir / "final.gda"));

  const auto mid = gda::load_checkpoint(full_dir / "ckpt_step20.gda");
  CHECK(mid.step == 20);
  CHECK(mid.find("optim.m.embedding"));
  const auto resumed = gda::train(mid, corpus, cfg, {part_dir, 0, {}});
  REQUIRE(resumed.steps.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(resumed.steps[i].loss == full.steps[20 + i].loss);
  CHECK(read_file(part_dir / "final.gda") == read_file(full_dir / "final.gda"));
}

TEST_CASE("stop_at writes an intermediate checkpoint") {
  const auto corpus = text_corpus(prose(), 16);
  const auto cfg = small_train(gda::Precision::F32, 20);
  const auto start = gda::init_checkpoint(small_lm(gda::Precision::F32), 7);
  const fs::path dir = scratch_dir("stop");
  const auto r = gda::train(start, corpus, cfg, {dir, 8, {}});
  CHECK(r.steps.size() == 8);
  CHECK(r.final_path == dir / "ckpt_step8.gda");
  const std::string log = read_file(dir / "metrics.log");
  CHECK(std::count(log.begin(), log.end(), '\n') == 8);
  CHECK(log.find("tokens_per_sec=0 wall_ms=0") != std::string::npos);
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
  const auto corpus = text_corpus(prose(), 16);
  const auto cfg = small_train(gda::Precision::F64, 10);
  auto start = gda::init_checkpoint(small_lm(gda::Precision::F64), 8);
  std::get<gda::Tensor<double>>(*start.find("final_norm"))[0] = std::numeric_limits<double>::quiet_NaN();
  const fs::path dir = scratch_dir("abort");
  try {
    gda::train(start, corpus, cfg, {dir, 0, {}});
    FAIL("expected TrainAbort");
  } catch (const gda::TrainAbort& e) {
    CHECK(e.step() == 0);
    CHECK(e.checkpoint_path() == dir / "last_good.gda");
    CHECK(fs::exists(e.checkpoint_path()));
  }
}

TEST_CASE("mismatched precision is rejected") {
  const auto corpus = text_corpus(prose(), 16);
  const auto start = gda::init_checkpoint(small_lm(gda::Precision::F64), 8);
  CHECK_THROWS_AS(gda::train(start, corpus, small_train(gda::Precision::F32, 5)), gda::ConfigError);
}

TEST_CASE("greedy continuation of a period-two corpus") {
  std::string text;
  for (int i = 0; i < 400; ++i) text += "ab";
  const gda::CorpusStream corpus({"abab"}, gda::tokenize_documents(text, gda::DocumentSplit::PerFile), 16, 0.0);
  auto cfg = small_train(gda::Precision::F64, 80);
  cfg.peak_lr = 2e-2;
  const auto r = gda::train(gda::init_checkpoint(small_lm(gda::Precision::F64), 9), corpus, cfg);
  const auto params = gda::params_from_checkpoint<double>(r.checkpoint);
  const std::vector<Token> prompt = {'a', 'b', 'a', 'b', 'a'};
  const auto out = gda::generate<double>(prompt, r.checkpoint.config, params, 8, 0.0, 0);
  CHECK(gda::ByteTokenizer::decode(out) == "ababababababa");
}

TEST_CASE("training config files") {
  const fs::path dir = scratch_dir("config");
  { std::ofstream(dir / "c.txt") << prose(); }
  const std::string base =
      "d_model = 16\nn_layers = 1\nn_heads = 4\nratio = 1\nd_head = 4\nn_kv = 2\n"
      "total_steps = 10\nbatch_sequences = 2\nseq_len = 8\ncorpus = c.txt\n";
  const auto setup = gda::parse_train_setup(base, "cfg", dir);
  CHECK(setup.model.gda.d_model == 16);
  CHECK(setup.model.gda.max_seq_len == 8);
  CHECK(setup.model.gda.precision == gda::Precision::F32);
  CHECK(setup.train.precision == gda::Precision::F32);
  REQUIRE(setup.corpus.size() == 1);
  CHECK(setup.corpus[0] == dir / "c.txt");

  const auto f64 = gda::parse_train_setup(base + "precision = f64\npeak_lr = 1e-3\n", "cfg", dir);
  CHECK(f64.model.gda.precision == gda::Precision::F64);
  CHECK(f64.train.peak_lr == 1e-3);

  CHECK_THROWS_WITH_AS(gda::parse_train_setup(base + "learning_rate = 1\n", "cfg", dir),
                       doctest::Contains("learning_rate"), gda::ConfigError);
  std::string missing = base;
  missing.erase(missing.find("seq_len"), std::string("seq_len = 8\n").size());
  CHECK_THROWS_WITH_AS(gda::parse_train_setup(missing, "cfg", dir), doctest::Contains("seq_len"), gda::ConfigError);
  CHECK_NOTHROW(gda::parse_train_setup("total_steps = 1\nbatch_sequences = 1\nseq_len = 4\ncorpus = c.txt\n", "cfg",
                                       dir, false));
}
