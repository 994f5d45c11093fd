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
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gda/gda.h"

namespace fs = std::filesystem;

namespace {

const char* kModel =
    "d_model = 16\nn_layers = 2\nn_heads = 8\nratio = 3\nd_head = 4\nn_kv = 2\nmax_seq_len = 16\nprecision = f64\n"
    "mlp_hidden = 32\n";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gda_test_capi" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  gda_free_string(s);
  return out;
}

std::string last_line(const std::string& text) {
  const auto end = text.find_last_not_of('\n');
  const auto start = text.rfind('\n', end);
  return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

struct Handle {
  gda_checkpoint* p = nullptr;
  ~Handle() { gda_checkpoint_free(p); }
};

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(gda_version()) > 0);
  CHECK(std::string(gda_status_name(GDA_OK)) == "ok");
  CHECK(std::string(gda_status_name(GDA_ERR_AUDIT_FAILED)).size() > 0);
}

TEST_CASE("checkpoint lifecycle") {
  Handle h;
  REQUIRE(gda_checkpoint_init(kModel, 7, &h.p) == GDA_OK);
  std::size_t vocab = 0, count = 0;
  std::uint64_t step = 99;
  CHECK(gda_checkpoint_vocab_size(h.p, &vocab) == GDA_OK);
  CHECK(vocab == 258);
  CHECK(gda_checkpoint_step(h.p, &step) == GDA_OK);
  CHECK(step == 0);
  CHECK(gda_checkpoint_tensor_count(h.p, &count) == GDA_OK);
  CHECK(count == 1 + 2 * 17 + 1);
  const char* name = nullptr;
  std::size_t elements = 0;
  CHECK(gda_checkpoint_tensor_info(h.p, 0, &name, &elements) == GDA_OK);
  CHECK(std::string(name) == "embedding");
  CHECK(elements == 258 * 16);
  CHECK(gda_checkpoint_tensor_info(h.p, count, &name, &elements) == GDA_ERR_INDEX);

  char* header = nullptr;
  REQUIRE(gda_checkpoint_header(h.p, &header) == GDA_OK);
  CHECK(take(header).find("ratio = 3") != std::string::npos);

  const fs::path dir = scratch("lifecycle");
  const std::string path = (dir / "a.gda").string();
  REQUIRE(gda_checkpoint_save(h.p, path.c_str()) == GDA_OK);
  Handle back;
  REQUIRE(gda_checkpoint_load(path.c_str(), &back.p) == GDA_OK);

  const std::uint32_t tokens[] = {256, 72, 105};
  std::vector<double> a(3 * 258), b(3 * 258);
  REQUIRE(gda_logits(h.p, tokens, 3, a.data()) == GDA_OK);
  REQUIRE(gda_logits(back.p, tokens, 3, b.data()) == GDA_OK);
  CHECK(a == b);

  std::vector<std::uint32_t> out(3 + 5);
  std::size_t len = 0;
  REQUIRE(gda_generate(h.p, tokens, 3, 5, 0.0, 0, out.data(), &len) == GDA_OK);
  CHECK(len == 8);
  CHECK(std::equal(tokens, tokens + 3, out.begin()));

  char* report = nullptr;
  REQUIRE(gda_verify_preservation(h.p, back.p, 4, 1, 0.0, &report) == GDA_OK);
  CHECK(last_line(take(report)).find("pass=true") != std::string::npos);
}

TEST_CASE("errors map to status codes") {
  Handle h;
  CHECK(gda_checkpoint_init(nullptr, 0, &h.p) == GDA_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(gda_last_error()) > 0);
  CHECK(gda_checkpoint_init("d_model = 16\n", 0, &h.p) == GDA_ERR_CONFIG);
  CHECK(gda_checkpoint_init((std::string(kModel) + "colour = blue\n").c_str(), 0, &h.p) == GDA_ERR_CONFIG);
  CHECK(std::string(gda_last_error()).find("colour") != std::string::npos);
  CHECK(gda_checkpoint_load("/nonexistent/x.gda", &h.p) == GDA_ERR_IO);

  const fs::path dir = scratch("errors");
  { std::ofstream(dir / "junk.gda") << "not a checkpoint"; }
  CHECK(gda_checkpoint_load((dir / "junk.gda").string().c_str(), &h.p) == GDA_ERR_FORMAT);
  CHECK(h.p == nullptr);

  REQUIRE(gda_checkpoint_init(kModel, 1, &h.p) == GDA_OK);
  const std::uint32_t bad[] = {999};
  double out[258];
  CHECK(gda_logits(h.p, bad, 1, out) == GDA_ERR_INDEX);
  CHECK(gda_logits(h.p, bad, 0, out) == GDA_ERR_INVALID_ARGUMENT);
}

TEST_CASE("commands return reports ending in a summary line") {
  const std::size_t ratios[] = {1, 2, 3, 4, 5, 11};
  char* report = nullptr;
  REQUIRE(gda_cmd_alloc(48, ratios, 6, nullptr, &report) == GDA_OK);
  const std::string alloc = take(report);
  CHECK(last_line(alloc).rfind("summary command=alloc", 0) == 0);
  CHECK(last_line(alloc).find("valid=5 invalid=1") != std::string::npos);

  REQUIRE(gda_cmd_flops(nullptr, 0, nullptr, 0, 128, nullptr, &report) == GDA_OK);
  CHECK(last_line(take(report)).find("score_maps=48") != std::string::npos);

  gda_options opts{};
  opts.force_f64 = 1;
  REQUIRE(gda_cmd_gradcheck(nullptr, 0, 0, &opts, nullptr, &report) == GDA_OK);
  CHECK(last_line(take(report)).find("pass=1") != std::string::npos);
  opts.has_tol = 1;
  opts.tol = 0.0;
  CHECK(gda_cmd_gradcheck(nullptr, 0, 0, &opts, nullptr, &report) == GDA_ERR_AUDIT_FAILED);
  CHECK(last_line(take(report)).find("pass=0") != std::string::npos);
}

TEST_CASE("grow through the C interface") {
  const fs::path dir = scratch("grow");
  Handle h;
  REQUIRE(gda_checkpoint_init(kModel, 3, &h.p) == GDA_OK);
  const std::string src = (dir / "src.gda").string();
  REQUIRE(gda_checkpoint_save(h.p, src.c_str()) == GDA_OK);
  char* report = nullptr;
  gda_options opts{};
  REQUIRE(gda_cmd_grow(src.c_str(), (dir / "uniform").string().c_str(), 2, 0, &opts, &report) == GDA_OK);
  CHECK(last_line(take(report)).find("pass=true") != std::string::npos);
  CHECK(fs::exists(dir / "uniform" / "grown.gda"));
  CHECK(fs::exists(dir / "uniform" / "audit.txt"));
  report = nullptr;
  CHECK(gda_cmd_grow(src.c_str(), (dir / "bad").string().c_str(), 2, 4, &opts, &report) == GDA_ERR_PLAN);
  gda_free_string(report);
}
