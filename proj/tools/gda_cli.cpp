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

// gda: command-line front end over the C API.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gda/gda.h"

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kAudit = 3 };

int exit_code(gda_status s) {
  switch (s) {
    case GDA_OK: return kOk;
    case GDA_ERR_AUDIT_FAILED: return kAudit;
    case GDA_ERR_NON_FINITE:
    case GDA_ERR_IO:
    case GDA_ERR_INTERNAL: return kRuntime;
    default: return kUsage;
  }
}

const char* c_str_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct Flags {
  std::string config, ckpt, out, input;
  std::optional<std::uint64_t> seed;
  bool f64 = false;
  std::optional<double> tol;
  std::vector<std::size_t> ratios;
  std::size_t heads = 0;
  std::size_t factor = 0;
  std::size_t target_ratio = 0;
  std::size_t seq_len = 0;

  gda_options options() const {
    gda_options o{};
    if (seed) {
      o.has_seed = 1;
      o.seed = *seed;
    }
    o.force_f64 = f64 ? 1 : 0;
    if (tol) {
      o.has_tol = 1;
      o.tol = *tol;
    }
    return o;
  }
};

int report(gda_status status, char*& text) {
  if (text) {
    std::fputs(text, stdout);
    std::fflush(stdout);
    gda_free_string(text);
    text = nullptr;
  }
  if (status != GDA_OK && status != GDA_ERR_AUDIT_FAILED)
    std::fprintf(stderr, "error: %s: %s\n", gda_status_name(status), gda_last_error());
  else if (status == GDA_ERR_AUDIT_FAILED)
    std::fprintf(stderr, "audit failed\n");
  return exit_code(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped differential attention toolkit"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(gda_version()));
  Flags f;

  auto seed = [&](CLI::App* sc) { sc->add_option("--seed", f.seed, "Random seed"); };
  auto f64 = [&](CLI::App* sc) { sc->add_flag("--f64", f.f64, "Run in 64-bit precision (default 32-bit)"); };
  auto tol = [&](CLI::App* sc, const char* what) { sc->add_option("--tol", f.tol, what); };
  auto out = [&](CLI::App* sc, bool required) {
    sc->add_option("--out", f.out, "Output directory")->required(required);
  };

  auto* train = app.add_subcommand("train", "Train a model (fresh or from --ckpt)");
  train->add_option("--config", f.config, "Training config file (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--ckpt", f.ckpt, "Checkpoint to continue from")->check(CLI::ExistingFile);
  out(train, true);
  seed(train);
  f64(train);

  auto* eval = app.add_subcommand("eval", "Perplexity of a checkpoint");
  eval->add_option("--ckpt", f.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* eval_cfg = eval->add_option("--config", f.config, "Config whose held-out corpus slice is scored")
                       ->check(CLI::ExistingFile);
  auto* eval_in = eval->add_option("--input", f.input, "Text file to score")->check(CLI::ExistingFile);
  eval_cfg->excludes(eval_in);
  out(eval, false);

  auto* grow = app.add_subcommand("grow", "Widen a checkpoint and audit function preservation");
  grow->add_option("--ckpt", f.ckpt, "Source checkpoint")->required()->check(CLI::ExistingFile);
  out(grow, true);
  grow->add_option("--factor", f.factor, "Hidden-axis factor N (uniform hyperclone grows heads by N too)")
      ->required()
      ->check(CLI::PositiveNumber);
  grow->add_option("--target-ratio", f.target_ratio,
                   "Group-differentiated growth to this G:1 ratio (signal heads only)")
      ->check(CLI::PositiveNumber);
  tol(grow, "Max allowed logit difference (default 1e-9 in 64-bit, 1e-3 in 32-bit)");
  seed(grow);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the attention gradients");
  gradcheck->add_option("--config", f.config, "Model config (default: built-in toy shape)")->check(CLI::ExistingFile);
  gradcheck->add_option("--heads", f.heads, "Total heads H")->check(CLI::PositiveNumber);
  gradcheck->add_option("--ratio", f.ratios, "Ratio G")->expected(1)->check(CLI::PositiveNumber);
  tol(gradcheck, "Max relative error (default 1e-4)");
  seed(gradcheck);
  f64(gradcheck);
  out(gradcheck, false);

  auto* inspect = app.add_subcommand("inspect", "Dump attention maps, lambda and row sums");
  inspect->add_option("--ckpt", f.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  inspect->add_option("--input", f.input, "Text file (BOS is prepended)")->required()->check(CLI::ExistingFile);
  out(inspect, false);

  auto* alloc = app.add_subcommand("alloc", "Signal/noise head allocation table");
  std::size_t alloc_heads = 48;
  alloc->add_option("--heads", alloc_heads, "Total heads H")->capture_default_str()->check(CLI::PositiveNumber);
  alloc->add_option("--ratio", f.ratios, "Ratios G, comma separated (default 1,2,3,5,11)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  out(alloc, false);

  auto* flops = app.add_subcommand("flops", "Parameter and FLOP accounting per ratio");
  flops->add_option("--config", f.config, "Model config (default: 0.9B preset dimensions)")->check(CLI::ExistingFile);
  flops->add_option("--heads", f.heads, "Total heads H")->check(CLI::PositiveNumber);
  flops->add_option("--ratio", f.ratios, "Ratios G, comma separated (default: every valid ratio)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  flops->add_option("--seq-len", f.seq_len, "Sequence length (default: max_seq_len)")->check(CLI::PositiveNumber);
  out(flops, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (auto* sc : app.get_subcommands()) target = sc;
    std::cout << (target == &app ? app.help("", CLI::AppFormatMode::All) : target->help());
    return kOk;
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  char* text = nullptr;
  const gda_options opts = f.options();
  if (train->parsed()) {
    return report(gda_cmd_train(f.config.c_str(), c_str_or_null(f.ckpt), f.out.c_str(), &opts, &text), text);
  }
  if (eval->parsed()) {
    if (f.config.empty() == f.input.empty()) {
      std::fprintf(stderr, "error: eval needs exactly one of --config or --input\n");
      return kUsage;
    }
    return report(gda_cmd_eval(f.ckpt.c_str(), c_str_or_null(f.config), c_str_or_null(f.input), c_str_or_null(f.out), &text), text);
  }
  if (grow->parsed())
    return report(gda_cmd_grow(f.ckpt.c_str(), f.out.c_str(), f.factor, f.target_ratio, &opts, &text), text);
  if (gradcheck->parsed()) {
    const std::size_t ratio = f.ratios.empty() ? 0 : f.ratios.front();
    return report(gda_cmd_gradcheck(c_str_or_null(f.config), f.heads, ratio, &opts, c_str_or_null(f.out), &text), text);
  }
  if (inspect->parsed())
    return report(gda_cmd_inspect(f.ckpt.c_str(), f.input.c_str(), c_str_or_null(f.out), &text), text);
  if (alloc->parsed()) {
    if (f.ratios.empty()) f.ratios = {1, 2, 3, 5, 11};
    return report(gda_cmd_alloc(alloc_heads, f.ratios.data(), f.ratios.size(), c_str_or_null(f.out), &text), text);
  }
  if (flops->parsed())
    return report(gda_cmd_flops(c_str_or_null(f.config), f.heads, f.ratios.data(), f.ratios.size(), f.seq_len, c_str_or_null(f.out), &text), text);
  return kUsage;
}
