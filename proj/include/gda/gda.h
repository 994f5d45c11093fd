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

/* C interface to the GDA toolkit. All functions return a gda_status; on
 * failure gda_last_error() describes the problem (per thread). Strings
 * returned through char** out-parameters are heap allocated and must be
 * released with gda_free_string(). */

#ifndef GDA_GDA_H_
#define GDA_GDA_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GDA_API __declspec(dllexport)
#else
#define GDA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gda_status {
  GDA_OK = 0,
  GDA_ERR_INVALID_ARGUMENT = 1,
  GDA_ERR_CONFIG = 2,
  GDA_ERR_DIMENSION = 3,
  GDA_ERR_INDEX = 4,
  GDA_ERR_FORMAT = 5,
  GDA_ERR_IO = 6,
  GDA_ERR_PLAN = 7,
  GDA_ERR_NON_FINITE = 8,
  GDA_ERR_AUDIT_FAILED = 9,
  GDA_ERR_INTERNAL = 10
} gda_status;

/* Optional overrides shared by the commands. Zero-initialise and set the
 * has_* flags for the fields you provide. */
typedef struct gda_options {
  int has_seed;
  uint64_t seed;
  int force_f64;
  int has_tol;
  double tol;
} gda_options;

typedef struct gda_checkpoint gda_checkpoint;

GDA_API const char* gda_version(void);
GDA_API const char* gda_status_name(gda_status status);
/* Message for the last failing call on this thread; "" if none. */
GDA_API const char* gda_last_error(void);
GDA_API void gda_free_string(char* s);

/* ---- checkpoints ---- */

/* Fresh model from `config_text` (flat `key = value` model keys). */
GDA_API gda_status gda_checkpoint_init(const char* config_text, uint64_t seed, gda_checkpoint** out);
GDA_API gda_status gda_checkpoint_load(const char* path, gda_checkpoint** out);
GDA_API gda_status gda_checkpoint_save(const gda_checkpoint* ckpt, const char* path);
GDA_API void gda_checkpoint_free(gda_checkpoint* ckpt);
/* Header text exactly as stored on disk. */
GDA_API gda_status gda_checkpoint_header(const gda_checkpoint* ckpt, char** out_text);
GDA_API gda_status gda_checkpoint_step(const gda_checkpoint* ckpt, uint64_t* out_step);
GDA_API gda_status gda_checkpoint_vocab_size(const gda_checkpoint* ckpt, size_t* out_vocab);
GDA_API gda_status gda_checkpoint_tensor_count(const gda_checkpoint* ckpt, size_t* out_count);
/* Name and element count of tensor `index`; *out_name stays owned by the
 * checkpoint. */
GDA_API gda_status gda_checkpoint_tensor_info(const gda_checkpoint* ckpt, size_t index, const char** out_name,
                                              size_t* out_elements);

/* Logits for one token sequence as doubles, row-major [n_tokens x vocab].
 * `out` must hold n_tokens * vocab values. */
GDA_API gda_status gda_logits(const gda_checkpoint* ckpt, const uint32_t* tokens, size_t n_tokens, double* out);

/* Greedy (temperature 0) or seeded sampling continuation. `out` must hold
 * n_prompt + n_new tokens; *out_len receives the length written. */
GDA_API gda_status gda_generate(const gda_checkpoint* ckpt, const uint32_t* prompt, size_t n_prompt, size_t n_new,
                                double temperature, uint64_t seed, uint32_t* out, size_t* out_len);

/* Max |logit difference| over n_samples random sequences. */
GDA_API gda_status gda_verify_preservation(const gda_checkpoint* a, const gda_checkpoint* b, size_t n_samples,
                                           uint64_t seed, double tol, char** out_report);

/* ---- commands (each fills *out_report, ending in a "summary" line) ---- */

/* config_path may be NULL for the built-in toy shape; heads/ratio of 0 keep
 * the configured values. */
GDA_API gda_status gda_cmd_gradcheck(const char* config_path, size_t heads, size_t ratio, const gda_options* options,
                                     const char* out_dir, char** out_report);
GDA_API gda_status gda_cmd_alloc(size_t heads, const size_t* ratios, size_t n_ratios, const char* out_dir,
                                 char** out_report);
/* n_ratios 0 lists every valid ratio. config_path NULL uses the 0.9B preset
 * dimensions; seq_len 0 uses the config's max_seq_len. */
GDA_API gda_status gda_cmd_flops(const char* config_path, size_t heads, const size_t* ratios, size_t n_ratios,
                                 size_t seq_len, const char* out_dir, char** out_report);
/* ckpt_path NULL starts from a fresh initialisation. */
GDA_API gda_status gda_cmd_train(const char* config_path, const char* ckpt_path, const char* out_dir,
                                 const gda_options* options, char** out_report);
/* Exactly one of config_path / input_path must be non-NULL. */
GDA_API gda_status gda_cmd_eval(const char* ckpt_path, const char* config_path, const char* input_path,
                                const char* out_dir, char** out_report);
/* target_ratio 0 selects uniform hypercloning. */
GDA_API gda_status gda_cmd_grow(const char* ckpt_path, const char* out_dir, size_t factor, size_t target_ratio,
                                const gda_options* options, char** out_report);
GDA_API gda_status gda_cmd_inspect(const char* ckpt_path, const char* input_path, const char* out_dir,
                                   char** out_report);

#ifdef __cplusplus
}
#endif

#endif /* GDA_GDA_H_ */
