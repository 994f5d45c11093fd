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

#include "gda/gda.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "gda/checkpoint.hpp"
#include "gda/commands.hpp"
#include "gda/config_io.hpp"
#include "gda/gradcheck.hpp"
#include "gda/growth.hpp"
#include "gda/training.hpp"

struct gda_checkpoint {
  gda::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

gda_status set_error(gda_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
gda_status guard(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const gda::TrainAbort& e) {
    std::string msg = e.what();
    if (!e.checkpoint_path().empty()) msg += "; last good checkpoint: " + e.checkpoint_path().string();
    return set_error(GDA_ERR_NON_FINITE, msg);
  } catch (const gda::NonFiniteError& e) {
    return set_error(GDA_ERR_NON_FINITE, e.what());
  } catch (const gda::DimensionError& e) {
    return set_error(GDA_ERR_DIMENSION, e.what());
  } catch (const gda::ConfigError& e) {
    return set_error(GDA_ERR_CONFIG, e.what());
  } catch (const gda::IndexError& e) {
    return set_error(GDA_ERR_INDEX, e.what());
  } catch (const gda::FormatError& e) {
    return set_error(GDA_ERR_FORMAT, e.what());
  } catch (const gda::IoError& e) {
    return set_error(GDA_ERR_IO, e.what());
  } catch (const gda::PlanError& e) {
    return set_error(GDA_ERR_PLAN, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(GDA_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(GDA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(GDA_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(GDA_ERR_INTERNAL, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define GDA_REQUIRE(cond, what) \
  if (!(cond)) return set_error(GDA_ERR_INVALID_ARGUMENT, what)

std::filesystem::path opt_path(const char* p) { return p ? std::filesystem::path(p) : std::filesystem::path(); }

gda::CommandOptions to_options(const gda_options* o) {
  gda::CommandOptions out;
  if (!o) return out;
  if (o->has_seed) out.seed = o->seed;
  out.force_f64 = o->force_f64 != 0;
  if (o->has_tol) out.tol = o->tol;
  return out;
}

gda_status finish(const gda::CommandResult& res, char** out_report) {
  *out_report = dup_string(res.report);
  if (res.audit_failed) return set_error(GDA_ERR_AUDIT_FAILED, "audit failed; see report");
  return GDA_OK;
}

}  // namespace

extern "C" {

const char* gda_version(void) { return "0.1.0"; }

const char* gda_status_name(gda_status status) {
  switch (status) {
    case GDA_OK: return "ok";
    case GDA_ERR_INVALID_ARGUMENT: return "invalid argument";
    case GDA_ERR_CONFIG: return "config error";
    case GDA_ERR_DIMENSION: return "dimension error";
    case GDA_ERR_INDEX: return "index error";
    case GDA_ERR_FORMAT: return "format error";
    case GDA_ERR_IO: return "io error";
    case GDA_ERR_PLAN: return "plan error";
    case GDA_ERR_NON_FINITE: return "non-finite value";
    case GDA_ERR_AUDIT_FAILED: return "audit failed";
    case GDA_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* gda_last_error(void) { return g_last_error.c_str(); }

void gda_free_string(char* s) { std::free(s); }

gda_status gda_checkpoint_init(const char* config_text, uint64_t seed, gda_checkpoint** out) {
  GDA_REQUIRE(config_text && out, "config_text and out must be non-null");
  return guard([&] {
    *out = new gda_checkpoint{gda::init_checkpoint(gda::parse_lm_config(config_text, "config"), seed)};
    return GDA_OK;
  });
}

gda_status gda_checkpoint_load(const char* path, gda_checkpoint** out) {
  GDA_REQUIRE(path && out, "path and out must be non-null");
  return guard([&] {
    *out = new gda_checkpoint{gda::load_checkpoint(path)};
    return GDA_OK;
  });
}

gda_status gda_checkpoint_save(const gda_checkpoint* ckpt, const char* path) {
  GDA_REQUIRE(ckpt && path, "ckpt and path must be non-null");
  return guard([&] {
    gda::save_checkpoint(ckpt->ckpt, path);
    return GDA_OK;
  });
}

void gda_checkpoint_free(gda_checkpoint* ckpt) { delete ckpt; }

gda_status gda_checkpoint_header(const gda_checkpoint* ckpt, char** out_text) {
  GDA_REQUIRE(ckpt && out_text, "ckpt and out_text must be non-null");
  return guard([&] {
    *out_text = dup_string(ckpt->ckpt.header_text());
    return GDA_OK;
  });
}

gda_status gda_checkpoint_step(const gda_checkpoint* ckpt, uint64_t* out_step) {
  GDA_REQUIRE(ckpt && out_step, "ckpt and out_step must be non-null");
  *out_step = ckpt->ckpt.step;
  return GDA_OK;
}

gda_status gda_checkpoint_vocab_size(const gda_checkpoint* ckpt, size_t* out_vocab) {
  GDA_REQUIRE(ckpt && out_vocab, "ckpt and out_vocab must be non-null");
  *out_vocab = ckpt->ckpt.config.vocab_size;
  return GDA_OK;
}

gda_status gda_checkpoint_tensor_count(const gda_checkpoint* ckpt, size_t* out_count) {
  GDA_REQUIRE(ckpt && out_count, "ckpt and out_count must be non-null");
  *out_count = ckpt->ckpt.tensors.size();
  return GDA_OK;
}

gda_status gda_checkpoint_tensor_info(const gda_checkpoint* ckpt, size_t index, const char** out_name,
                                      size_t* out_elements) {
  GDA_REQUIRE(ckpt && out_name && out_elements, "arguments must be non-null");
  if (index >= ckpt->ckpt.tensors.size()) return set_error(GDA_ERR_INDEX, "tensor index out of range");
  const auto& nt = ckpt->ckpt.tensors[index];
  *out_name = nt.name.c_str();
  *out_elements = gda::shape_product(gda::shape_of_any(nt.tensor));
  return GDA_OK;
}

gda_status gda_logits(const gda_checkpoint* ckpt, const uint32_t* tokens, size_t n_tokens, double* out) {
  GDA_REQUIRE(ckpt && tokens && out && n_tokens > 0, "arguments must be non-null and n_tokens > 0");
  return guard([&] {
    const std::span<const gda::Token> toks(tokens, n_tokens);
    const auto& c = ckpt->ckpt;
    gda::Tensor<double> logits;
    if (c.config.gda.precision == gda::Precision::F32)
      logits = gda::lm_forward(toks, c.config, gda::params_from_checkpoint<float>(c)).cast<double>();
    else
      logits = gda::lm_forward(toks, c.config, gda::params_from_checkpoint<double>(c));
    std::memcpy(out, logits.data(), logits.size() * sizeof(double));
    return GDA_OK;
  });
}

gda_status gda_generate(const gda_checkpoint* ckpt, const uint32_t* prompt, size_t n_prompt, size_t n_new,
                        double temperature, uint64_t seed, uint32_t* out, size_t* out_len) {
  GDA_REQUIRE(ckpt && prompt && out && out_len && n_prompt > 0, "arguments must be non-null and n_prompt > 0");
  return guard([&] {
    const std::span<const gda::Token> p(prompt, n_prompt);
    const auto& c = ckpt->ckpt;
    std::vector<gda::Token> toks;
    if (c.config.gda.precision == gda::Precision::F32)
      toks = gda::generate(p, c.config, gda::params_from_checkpoint<float>(c), n_new, temperature, seed);
    else
      toks = gda::generate(p, c.config, gda::params_from_checkpoint<double>(c), n_new, temperature, seed);
    std::memcpy(out, toks.data(), toks.size() * sizeof(uint32_t));
    *out_len = toks.size();
    return GDA_OK;
  });
}

gda_status gda_verify_preservation(const gda_checkpoint* a, const gda_checkpoint* b, size_t n_samples,
                                   uint64_t seed, double tol, char** out_report) {
  GDA_REQUIRE(a && b && out_report, "arguments must be non-null");
  return guard([&] {
    const auto rep = gda::verify_preservation(a->ckpt, b->ckpt, n_samples, seed, tol);
    *out_report = dup_string(rep.to_text());
    return rep.passed ? GDA_OK : set_error(GDA_ERR_AUDIT_FAILED, "preservation audit failed");
  });
}

gda_status gda_cmd_gradcheck(const char* config_path, size_t heads, size_t ratio, const gda_options* options,
                             const char* out_dir, char** out_report) {
  GDA_REQUIRE(out_report, "out_report must be non-null");
  return guard([&] {
    gda::GdaConfig cfg = gda::gradcheck_toy_config();
    cfg.precision = gda::Precision::F32;
    if (config_path) cfg = gda::load_model_config(config_path).gda;
    if (heads || ratio) {
      if (heads) cfg.n_heads = heads;
      if (ratio) cfg.ratio = ratio;
      cfg.validate_allocation();
      cfg.n_kv = cfg.noise_heads();
    }
    return finish(gda::cmd_gradcheck(cfg, to_options(options), opt_path(out_dir)), out_report);
  });
}

gda_status gda_cmd_alloc(size_t heads, const size_t* ratios, size_t n_ratios, const char* out_dir,
                         char** out_report) {
  GDA_REQUIRE(out_report && (ratios || n_ratios == 0), "out_report must be non-null");
  return guard([&] {
    std::vector<std::size_t> r(ratios, ratios + n_ratios);
    return finish(gda::cmd_alloc(heads, r, opt_path(out_dir)), out_report);
  });
}

gda_status gda_cmd_flops(const char* config_path, size_t heads, const size_t* ratios, size_t n_ratios, size_t seq_len,
                         const char* out_dir, char** out_report) {
  GDA_REQUIRE(out_report && (ratios || n_ratios == 0), "out_report must be non-null");
  return guard([&] {
    gda::GdaConfig base = config_path ? gda::load_model_config(config_path).gda : gda::table1_preset(1);
    if (heads) base.n_heads = heads;
    std::vector<std::size_t> r(ratios, ratios + n_ratios);
    return finish(gda::cmd_flops(base, r, seq_len ? seq_len : base.max_seq_len, opt_path(out_dir)), out_report);
  });
}

gda_status gda_cmd_train(const char* config_path, const char* ckpt_path, const char* out_dir,
                         const gda_options* options, char** out_report) {
  GDA_REQUIRE(config_path && out_dir && out_report, "config_path, out_dir and out_report must be non-null");
  return guard([&] {
    return finish(gda::cmd_train(config_path, opt_path(ckpt_path), out_dir, to_options(options)), out_report);
  });
}

gda_status gda_cmd_eval(const char* ckpt_path, const char* config_path, const char* input_path, const char* out_dir,
                        char** out_report) {
  GDA_REQUIRE(ckpt_path && out_report, "ckpt_path and out_report must be non-null");
  return guard([&] {
    return finish(gda::cmd_eval(ckpt_path, opt_path(config_path), opt_path(input_path), opt_path(out_dir)),
                  out_report);
  });
}

gda_status gda_cmd_grow(const char* ckpt_path, const char* out_dir, size_t factor, size_t target_ratio,
                        const gda_options* options, char** out_report) {
  GDA_REQUIRE(ckpt_path && out_dir && out_report, "ckpt_path, out_dir and out_report must be non-null");
  return guard([&] {
    std::optional<std::size_t> tr;
    if (target_ratio) tr = target_ratio;
    return finish(gda::cmd_grow(ckpt_path, out_dir, factor, tr, to_options(options)), out_report);
  });
}

gda_status gda_cmd_inspect(const char* ckpt_path, const char* input_path, const char* out_dir, char** out_report) {
  GDA_REQUIRE(ckpt_path && input_path && out_report, "ckpt_path, input_path and out_report must be non-null");
  return guard([&] { return finish(gda::cmd_inspect(ckpt_path, input_path, opt_path(out_dir)), out_report); });
}

}  // extern "C"
