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
#include <set>
#include <vector>

#include "doctest.h"
#include "gda/attention.hpp"
#include "oracles.hpp"
#include "support.hpp"

using gda::GdaConfig;
using gda::Tensor;

TEST_CASE("head index helpers") {
  CHECK(gda::head_group_index(0, 12, 36) == 0);
  CHECK(gda::head_group_index(13, 12, 36) == 1);
  CHECK(gda::head_group_index(35, 12, 36) == 2);
  CHECK_THROWS_AS(gda::head_group_index(36, 12, 36), gda::IndexError);

  CHECK(gda::noise_partner(12, 12) == 0);
  CHECK(gda::noise_partner(35, 12) == 11);
  for (std::size_t i = 0; i < 24; ++i) CHECK(gda::noise_partner(i, 24) == i);

  CHECK(gda::kv_partner(0, 36, 12) == 0);
  CHECK(gda::kv_partner(35, 36, 12) == 11);
  for (std::size_t i = 0; i < 36; ++i) CHECK(gda::kv_partner(i, 36, 36) == i);
  CHECK_THROWS_AS(gda::kv_partner(0, 40, 12), gda::ConfigError);
}

TEST_CASE("every noise head serves exactly G signal heads") {
  for (std::size_t g : {1, 2, 3, 5, 11}) {
    const std::size_t h = 48 / (g + 1), s = 48 - h;
    std::vector<std::size_t> uses(h, 0);
    for (std::size_t i = 0; i < s; ++i) ++uses[gda::noise_partner(i, h)];
    for (std::size_t u : uses) CHECK(u == g);
  }
}

TEST_CASE("config validation") {
  GdaConfig cfg = testing::attention_config(16, 8, 3, 4, 2);
  CHECK_NOTHROW(cfg.validate());
  cfg.ratio = 2;  // 3 does not divide 8
  CHECK_THROWS_AS(cfg.validate(), gda::ConfigError);
  cfg = testing::attention_config(16, 8, 3, 4, 4);  // 4 does not divide 6
  CHECK_THROWS_AS(cfg.validate(), gda::ConfigError);
  cfg = testing::attention_config(16, 8, 3, 3, 2);  // odd head width
  CHECK_THROWS_AS(cfg.validate(), gda::ConfigError);
  cfg = testing::attention_config(16, 8, 1, 4, 4);
  CHECK(cfg.signal_heads() == 4);
  CHECK(cfg.noise_heads() == 4);
}

TEST_CASE("lambda value") {
  auto p = gda::AttentionParams<double>::zeros(testing::attention_config(8, 4, 1, 2, 2), 0.8);
  CHECK(gda::lambda_value(p.lambda) == doctest::Approx(0.8).epsilon(1e-15));
  p.lambda.init[0] = 0.5;
  p.lambda.q1[0] = std::log(2.0);
  p.lambda.k1[0] = 1.0;
  CHECK(gda::lambda_value(p.lambda) == doctest::Approx(1.5).epsilon(1e-15));

  gda::Rng rng(4);
  auto q = gda::AttentionParams<double>::zeros(testing::attention_config(8, 4, 1, 6, 2), 0.3);
  for (auto* v : {&q.lambda.q1, &q.lambda.k1, &q.lambda.q2, &q.lambda.k2})
    for (double& x : v->values()) x = rng.normal();
  CHECK(std::abs(gda::lambda_value(q.lambda) - oracle::lambda(q.lambda)) <= 1e-12);
}

TEST_CASE("lambda init schedule") {
  CHECK(gda::lambda_init_default(1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(gda::lambda_init_default(2) == doctest::Approx(0.8 - 0.6 * std::exp(-0.3)).epsilon(1e-15));
  CHECK(gda::lambda_init_default(2) == doctest::Approx(0.35551).epsilon(1e-5));
  CHECK(std::abs(gda::lambda_init_default(500) - 0.8) < 1e-12);
  for (std::size_t l = 1; l < 40; ++l) CHECK(gda::lambda_init_default(l + 1) > gda::lambda_init_default(l));
  CHECK_THROWS_AS(gda::lambda_init_default(0), gda::IndexError);
}

TEST_CASE("single token closed form") {
  for (std::size_t g : {1, 3}) {
    const GdaConfig cfg = testing::attention_config(16, 8, g, 4, g == 1 ? 4 : 2);
    gda::Rng rng(20 + g);
    const auto p = testing::random_attention<double>(cfg, rng);
    const auto x = testing::random_tensor<double>({1, 16}, rng);
    const auto out = gda::gda_forward(x, p, cfg);

    const double lam = oracle::lambda(p.lambda), li = p.lambda.init[0];
    const oracle::Mat v = oracle::matmul(oracle::to_mat(x), oracle::to_mat(p.wv));
    std::vector<double> heads;
    const std::size_t s = cfg.signal_heads();
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t u = gda::kv_partner(i, s, cfg.n_kv);
      std::vector<double> o(v[0].begin() + u * 8, v[0].begin() + u * 8 + 8);
      for (double& e : o) e *= (1.0 - lam);
      for (double e : oracle::rms(o, p.head_norm.data() + i * 8)) heads.push_back((1.0 - li) * e);
    }
    const oracle::Mat want = oracle::matmul({heads}, oracle::to_mat(p.wo));
    for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(out[c] - want[0][c]) <= 1e-12);
  }
}

TEST_CASE("zero lambda reduces to plain softmax attention") {
  const GdaConfig cfg = testing::attention_config(16, 8, 1, 4, 4);
  gda::Rng rng(31);
  auto p = testing::random_attention<double>(cfg, rng, 0.0);
  for (auto* v : {&p.lambda.q1, &p.lambda.k1, &p.lambda.q2, &p.lambda.k2}) v->fill(0.0);
  const auto x = testing::random_tensor<double>({5, 16}, rng);
  const auto out = gda::diff_attention_forward(x, p, cfg);

  // Only the signal branch remains.
  auto no_noise = p;
  no_noise.wq2.fill(0.0);
  no_noise.wk2.fill(0.0);
  const auto plain = gda::diff_attention_forward(x, no_noise, cfg);
  CHECK(gda::max_abs_diff(out, plain) <= 1e-14);
  CHECK(gda::lambda_value(p.lambda) == 0.0);
}

TEST_CASE("grouped attention at ratio 1 equals differential attention") {
  const GdaConfig cfg = testing::attention_config(16, 8, 1, 4, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    gda::Rng rng(seed);
    const auto p = testing::random_attention<double>(cfg, rng);
    const auto x = testing::random_tensor<double>({4, 16}, rng);
    CHECK(gda::gda_forward(x, p, cfg) == gda::diff_attention_forward(x, p, cfg));
  }
  GdaConfig bad = cfg;
  bad.ratio = 3;
  CHECK_THROWS_AS(gda::diff_attention_forward(Tensor<double>({2, 16}), gda::AttentionParams<double>::zeros(bad, 0.2), bad),
                  gda::ConfigError);
}

TEST_CASE("grouped attention matches the no-sharing oracle") {
  const GdaConfig configs[] = {
      testing::attention_config(16, 4, 3, 4, 1),
      testing::attention_config(16, 8, 3, 4, 2),
      testing::attention_config(24, 12, 2, 6, 4),
      testing::attention_config(16, 8, 1, 4, 2),
  };
  for (const GdaConfig& cfg : configs) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      gda::Rng rng(100 + seed);
      const auto p = testing::random_attention<double>(cfg, rng);
      const auto x = testing::random_tensor<double>({7, cfg.d_model}, rng);
      const oracle::Mat want = oracle::gda(oracle::to_mat(x), p, cfg);
      const oracle::Mat got = oracle::to_mat(gda::gda_forward(x, p, cfg));
      double diff = 0.0;
      for (std::size_t r = 0; r < want.size(); ++r)
        for (std::size_t c = 0; c < want[r].size(); ++c) diff = std::max(diff, std::abs(got[r][c] - want[r][c]));
      CHECK(diff <= 1e-12);
    }
  }
}

TEST_CASE("batched attention equals per-sequence attention") {
  const GdaConfig cfg = testing::attention_config(16, 8, 3, 4, 2);
  gda::Rng rng(5);
  const auto p = testing::random_attention<double>(cfg, rng);
  const auto x = testing::random_tensor<double>({12, 16}, rng);
  const gda::RopeTable rope(4, cfg.rope_theta, 8);
  const auto both = gda::attention_forward<double>(x, 2, p, cfg, rope, nullptr);
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor<double> part({6, 16});
    std::copy(x.data() + b * 96, x.data() + b * 96 + 96, part.data());
    const auto one = gda::gda_forward(part, p, cfg);
    for (std::size_t e = 0; e < 96; ++e) CHECK(one[e] == both[b * 96 + e]);
  }
}

TEST_CASE("attention maps are row-stochastic and differential rows sum to 1 - lambda") {
  for (std::size_t g : {1, 2, 3}) {
    const GdaConfig cfg = testing::attention_config(24, 12, g, 4, 12 - 12 / (g + 1));
    gda::Rng rng(40 + g);
    const auto p = testing::random_attention<double>(cfg, rng);
    const auto x = testing::random_tensor<double>({8, 24}, rng);
    const auto maps = gda::attention_maps(x, p, cfg);
    CHECK(maps.signal.size() == cfg.signal_heads());
    CHECK(maps.noise.size() == cfg.noise_heads());
    CHECK(maps.lambda == doctest::Approx(oracle::lambda(p.lambda)).epsilon(1e-14));
    for (std::size_t i = 0; i < maps.signal.size(); ++i) {
      const auto& a1 = maps.signal[i];
      const auto& a2 = maps.noise[maps.noise_of_signal[i]];
      for (std::size_t r = 0; r < 8; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
          s1 += a1.at(r, c);
          s2 += a1.at(r, c) - maps.lambda * a2.at(r, c);
          if (c > r) CHECK(a1.at(r, c) == 0.0);
        }
        CHECK(std::abs(s1 - 1.0) <= 1e-6);
        CHECK(std::abs(s2 - (1.0 - maps.lambda)) <= 1e-6);
      }
    }
    std::vector<std::size_t> uses(cfg.noise_heads(), 0);
    for (std::size_t j : maps.noise_of_signal) ++uses[j];
    for (std::size_t u : uses) CHECK(u == g);
  }
}

TEST_CASE("perturbing a noise head changes exactly its partner heads") {
  const GdaConfig cfg = testing::attention_config(16, 8, 3, 4, 2);
  const std::size_t s = cfg.signal_heads(), h = cfg.noise_heads(), dv = 8;
  gda::Rng rng(61);
  const auto p = testing::random_attention<double>(cfg, rng);
  const auto x = testing::random_tensor<double>({6, 16}, rng);
  const gda::RopeTable rope(4, cfg.rope_theta, 6);
  gda::AttentionCache<double> base;
  gda::attention_forward<double>(x, 1, p, cfg, rope, &base);
  for (std::size_t j = 0; j < h; ++j) {
    auto q = p;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 4; ++c) q.wq2.at(r, j * 4 + c) += 0.5;
    gda::AttentionCache<double> moved;
    gda::attention_forward<double>(x, 1, q, cfg, rope, &moved);
    std::set<std::size_t> changed;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < dv; ++c)
          if (moved.head_out.at(r, i * dv + c) != base.head_out.at(r, i * dv + c)) changed.insert(i);
    std::set<std::size_t> partners;
    for (std::size_t i = 0; i < s; ++i)
      if (gda::noise_partner(i, h) == j) partners.insert(i);
    CHECK(changed == partners);
    CHECK(partners.size() == cfg.ratio);
  }
}

TEST_CASE("rope scores depend only on relative position") {
  gda::Rng rng(71);
  const auto q = testing::random_tensor<double>({1, 8}, rng);
  const auto k = testing::random_tensor<double>({1, 8}, rng);
  auto score = [&](std::size_t pq, std::size_t pk) {
    const std::size_t a[] = {pq}, b[] = {pk};
    const auto rq = gda::apply_rope(q, a, 10000.0), rk = gda::apply_rope(k, b, 10000.0);
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += rq[i] * rk[i];
    return s;
  };
  for (std::size_t shift : {1, 7, 100}) {
    CHECK(std::abs(score(5, 2) - score(5 + shift, 2 + shift)) <= 1e-8);
    CHECK(std::abs(score(3, 3) - score(3 + shift, 3 + shift)) <= 1e-8);
  }
}

TEST_CASE("attention output is causal") {
  const GdaConfig cfg = testing::attention_config(16, 8, 3, 4, 2);
  gda::Rng rng(81);
  const auto p = testing::random_attention<double>(cfg, rng);
  auto x = testing::random_tensor<double>({6, 16}, rng);
  const auto before = gda::gda_forward(x, p, cfg);
  for (std::size_t c = 0; c < 16; ++c) x.at(4, c) += 1.0;
  const auto after = gda::gda_forward(x, p, cfg);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 16; ++c) CHECK(before.at(r, c) == after.at(r, c));
}

TEST_CASE("shape errors") {
  const GdaConfig cfg = testing::attention_config(16, 8, 3, 4, 2);
  const auto p = gda::AttentionParams<double>::zeros(cfg, 0.2);
  CHECK_THROWS_AS(gda::gda_forward(Tensor<double>({2, 15}), p, cfg), gda::DimensionError);
  CHECK_THROWS_AS(gda::gda_forward(Tensor<double>({9, 16}), p, cfg), gda::IndexError);
  const GdaConfig other = testing::attention_config(16, 8, 1, 4, 2);
  CHECK_THROWS_AS(gda::gda_forward(Tensor<double>({2, 16}), p, other), gda::DimensionError);
}

TEST_CASE("allocation table") {
  const auto rows = gda::allocation_table(48, {1, 2, 3, 4, 5, 11});
  const std::size_t want[][2] = {{24, 24}, {32, 16}, {36, 12}, {0, 0}, {40, 8}, {44, 4}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].signal_heads == want[i][0]);
    CHECK(rows[i].noise_heads == want[i][1]);
  }
  CHECK_FALSE(rows[3].valid);
  CHECK(rows[3].reason == "5 does not divide 48");
}

TEST_CASE("parameter counts") {
  const GdaConfig toy = testing::attention_config(8, 4, 1, 2, 2);
  const auto pc = gda::param_count(toy);
  CHECK(pc.wq1 == 32);
  CHECK(pc.wq2 == 32);
  CHECK(pc.wk1 == 32);
  CHECK(pc.wk2 == 32);
  CHECK(pc.wv == 64);
  CHECK(pc.wo == 64);
  CHECK(pc.projections() == 256);

  const GdaConfig t1 = gda::table1_preset(3);
  const auto p1 = gda::AttentionParams<double>::zeros(t1, 0.2);
  CHECK(p1.wo.dim(0) == 2304);

  for (const GdaConfig& cfg : {testing::attention_config(16, 8, 3, 4, 2), testing::attention_config(24, 12, 2, 6, 4)}) {
    const auto p = gda::AttentionParams<double>::zeros(cfg, 0.2);
    std::uint64_t sum = 0;
    for (const auto* t : {&p.wq1, &p.wk1, &p.wq2, &p.wk2, &p.wv, &p.wo, &p.lambda.q1, &p.lambda.k1, &p.lambda.q2,
                          &p.lambda.k2, &p.head_norm})
      sum += t->size();
    CHECK(gda::param_count(cfg).total() == sum);
  }
}

TEST_CASE("flops estimate") {
  for (std::size_t g : {1, 2, 3, 5, 7, 11, 15, 23, 47}) {
    GdaConfig cfg = gda::table1_preset(1);
    cfg.ratio = g;
    CHECK(gda::flops_estimate(cfg, 512).score_maps == 48);
  }
  GdaConfig base = testing::attention_config(64, 8, 1, 8, 4);
  const auto f = gda::flops_estimate(base, 32);
  const std::uint64_t n = 32, d = 64, s = 4, dh = 8;
  CHECK(f.total() == s * (16 * n * d * dh + 8 * n * n * dh));
  const auto f2 = gda::flops_estimate(base, 64);
  CHECK(f2.score_flops == 4 * f.score_flops);
  CHECK(f2.projections() == 2 * f.projections());
  CHECK_THROWS_AS(gda::flops_estimate(base, 0), gda::ConfigError);
}

TEST_CASE("initialisation statistics") {
  const GdaConfig cfg = testing::attention_config(64, 8, 3, 8, 2);
  gda::Rng rng(1);
  const auto p = gda::init_attention_params<double>(cfg, 2, rng);
  double sq = 0.0, mx = 0.0;
  for (double v : p.wq1.values()) {
    sq += v * v;
    mx = std::max(mx, std::abs(v));
  }
  CHECK(std::sqrt(sq / p.wq1.size()) == doctest::Approx(0.02).epsilon(0.1));
  CHECK(mx <= 0.06);
  CHECK(p.lambda.init[0] == doctest::Approx(gda::lambda_init_default(2)));
  for (double v : p.head_norm.values()) CHECK(v == 1.0);
}
