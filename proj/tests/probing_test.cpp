// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmx/probing.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fmx/errors.hpp"
#include "fmx/synth_data.hpp"

namespace fmx {
namespace {

using Labels = std::vector<std::uint8_t>;

TEST(F1, Examples) {
  EXPECT_EQ(f1(Labels{1, 0, 1, 0}, Labels{1, 0, 1, 0}), 1.0);
  EXPECT_EQ(f1(Labels{0, 1, 0, 0}, Labels{1, 0, 1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(f1(Labels{1, 1, 1, 1}, Labels{1, 0, 1, 0}), 2.0 / 3.0);
  EXPECT_EQ(f1(Labels{0, 0}, Labels{0, 0}), 0.0);
  EXPECT_THROW(f1(Labels{1}, Labels{1, 0}), DataError);
}

// Exhaustive oracle: every latent, every candidate threshold, F1 by direct
// counting; first strict maximum in (latent, ascending threshold) order.
LatentChoice brute_select(const Matrix<double>& acts, const Labels& labels) {
  LatentChoice best{0, 0.0, -1.0};
  for (std::size_t i = 0; i < acts.cols(); ++i) {
    std::vector<double> thr{-INFINITY, 0.0};
    for (std::size_t t = 0; t < acts.rows(); ++t) thr.push_back(acts(t, i));
    std::sort(thr.begin(), thr.end());
    for (double th : thr) {
      Labels preds(acts.rows());
      for (std::size_t t = 0; t < acts.rows(); ++t) preds[t] = acts(t, i) > th;
      const double s = f1(preds, labels);
      if (s > best.f1) best = {i, th, s};
    }
  }
  return best;
}

TEST(SelectBestLatent, HandTableMatchesEnumeration) {
  // 6 tokens x 3 latents.
  Matrix<double> acts(6, 3);
  const double table[6][3] = {{0.0, 0.5, 2.0}, {0.0, 0.0, 1.0}, {0.3, 0.7, 0.0},
                              {0.9, 0.0, 0.5}, {0.0, 0.2, 0.0}, {0.4, 0.0, 1.5}};
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < 3; ++i) acts(t, i) = table[t][i];
  const Labels labels{1, 1, 0, 0, 0, 1};
  const auto got = select_best_latent(acts, labels);
  const auto want = brute_select(acts, labels);
  EXPECT_EQ(got.latent, 2u);
  EXPECT_EQ(got.threshold, 0.5);
  EXPECT_EQ(got.f1, 1.0);
  EXPECT_EQ(got.latent, want.latent);
  EXPECT_EQ(got.threshold, want.threshold);
}

TEST(SelectBestLatent, RandomTablesMatchEnumeration) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 4 + trial % 9;
    const std::size_t cols = 1 + trial % 4;
    Matrix<double> acts(rows, cols);
    Labels labels(rows);
    for (std::size_t t = 0; t < rows; ++t) {
      labels[t] = uniform01(rng) < 0.5;
      for (std::size_t i = 0; i < cols; ++i) {
        // Coarse values so ties and zeros are common.
        acts(t, i) = uniform01(rng) < 0.4 ? 0.0 : std::floor(uniform01(rng) * 4.0) / 4.0;
      }
    }
    labels[0] = 1;
    labels[1] = 0;
    const auto got = select_best_latent(acts, labels);
    const auto want = brute_select(acts, labels);
    ASSERT_EQ(got.latent, want.latent) << trial;
    ASSERT_EQ(got.threshold, want.threshold) << trial;
    ASSERT_DOUBLE_EQ(got.f1, want.f1) << trial;
  }
}

TEST(SelectBestLatent, AllZeroFallsBackToAllPositive) {
  Matrix<double> acts(4, 5);
  const auto c = select_best_latent(acts, Labels{1, 0, 1, 0});
  EXPECT_EQ(c.latent, 0u);
  EXPECT_TRUE(std::isinf(c.threshold) && c.threshold < 0);
  EXPECT_DOUBLE_EQ(c.f1, 2.0 / 3.0);
}

TEST(SelectBestLatent, InvariantToIncreasingTransform) {
  Rng rng(12);
  Matrix<double> acts(40, 6);
  Labels labels(40);
  for (std::size_t t = 0; t < 40; ++t) {
    labels[t] = t % 3 == 0;
    for (std::size_t i = 0; i < 6; ++i) acts(t, i) = uniform01(rng) < 0.5 ? 0.0 : uniform01(rng);
  }
  auto warped = acts;
  for (auto& v : warped.flat()) v = v * v + 3.0 * v;
  const auto a = select_best_latent(acts, labels);
  const auto b = select_best_latent(warped, labels);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.f1, b.f1);
}

TEST(SelectBestLatent, SingleClassIsDataError) {
  EXPECT_THROW(select_best_latent(Matrix<double>(3, 2), Labels{1, 1, 1}), DataError);
}

// Brute-force discrete optimal transport: each point is split into
// lcm(n, m) / size units of equal mass and every assignment is tried.
double brute_ot(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t units = std::lcm(a.size(), b.size());
  std::vector<double> ua, ub;
  for (double v : a) ua.insert(ua.end(), units / a.size(), v);
  for (double v : b) ub.insert(ub.end(), units / b.size(), v);
  std::vector<std::size_t> perm(units);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double cost = 0.0;
    for (std::size_t n = 0; n < units; ++n) cost += std::abs(ua[n] - ub[perm[n]]);
    best = std::min(best, cost / double(units));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// W1 = integral of |F_a - F_b| over the line.
double cdf_integral(std::vector<double> a, std::vector<double> b) {
  std::vector<double> pts = a;
  pts.insert(pts.end(), b.begin(), b.end());
  std::sort(pts.begin(), pts.end());
  auto cdf = [](const std::vector<double>& s, double x) {
    return double(std::count_if(s.begin(), s.end(), [x](double v) { return v <= x; })) /
           double(s.size());
  };
  double total = 0.0;
  for (std::size_t n = 0; n + 1 < pts.size(); ++n) {
    total += std::abs(cdf(a, pts[n]) - cdf(b, pts[n])) * (pts[n + 1] - pts[n]);
  }
  return total;
}

std::vector<double> sample(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 4.0 * uniform01(rng) - 1.0;
  return v;
}

TEST(Wasserstein, TrivialCases) {
  const std::vector<double> a{0.5, 2.0, -1.0};
  EXPECT_EQ(wasserstein1(a, a), 0.0);
  std::vector<double> b = a;
  for (auto& v : b) v += 0.75;
  EXPECT_NEAR(wasserstein1(a, b), 0.75, 1e-15);
  EXPECT_THROW(wasserstein1(a, std::vector<double>{}), DataError);
}

TEST(Wasserstein, MatchesBruteForceTransport) {
  Rng rng(13);
  const std::pair<std::size_t, std::size_t> sizes[] = {{2, 4}, {4, 2}, {3, 6}, {2, 3}, {4, 8},
                                                       {1, 7}, {6, 6}, {8, 8}, {3, 3}, {1, 5}};
  for (int rep = 0; rep < 3; ++rep) {
    for (const auto& [n, m] : sizes) {
      const auto a = sample(rng, n);
      const auto b = sample(rng, m);
      EXPECT_NEAR(wasserstein1(a, b), brute_ot(a, b), 1e-9) << n << "," << m;
    }
  }
}

TEST(Wasserstein, MatchesCdfIntegral) {
  Rng rng(14);
  for (int rep = 0; rep < 300; ++rep) {
    const auto a = sample(rng, 1 + rep % 10);
    const auto b = sample(rng, 1 + (rep / 10) % 10);
    EXPECT_NEAR(wasserstein1(a, b), cdf_integral(a, b), 1e-9);
  }
}

TEST(Wasserstein, MetricAxioms) {
  Rng rng(15);
  for (int rep = 0; rep < 300; ++rep) {
    const auto a = sample(rng, 1 + rep % 10);
    const auto b = sample(rng, 1 + (rep / 3) % 10);
    const auto c = sample(rng, 1 + (rep / 7) % 10);
    const double ab = wasserstein1(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(ab, wasserstein1(b, a), 1e-12);
    EXPECT_LE(ab, wasserstein1(a, c) + wasserstein1(c, b) + 1e-12);
    auto shuffled = a;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_EQ(wasserstein1(a, shuffled), 0.0);
  }
}

// Orthogonal planted features with the concept on feature `concept_index`; the
// embedded dictionary makes that latent a perfect separator.
struct PlantedTask {
  SynthSpec spec;
  ProbeTask task;
};

PlantedTask planted_task(std::size_t concept_index, std::size_t sequence_length, std::uint64_t seed) {
  Rng rng(seed);
  SynthConfig cfg;
  cfg.d = 16;
  cfg.layers = 4;
  cfg.single_layer_features = 4;
  cfg.cross_layer_features = 4;
  cfg.orthogonal = true;
  cfg.noise_sigma = 0.0;
  cfg.firing_prob = 0.2;
  cfg.concept_feature = concept_index;
  PlantedTask out{build_spec(cfg, rng), {}};
  out.task.name = "planted";
  out.task.train = generate(out.spec, 3000, rng, sequence_length).batch;
  out.task.eval = generate(out.spec, 3000, rng, sequence_length).batch;
  return out;
}

TEST(RunProbe, FindsPlantedLatent) {
  const auto p = planted_task(5, 0, 21);
  const auto m = embed_planted_dictionary(p.spec, 8);
  const auto r = run_probe(m, p.task, SparsifyMode::threshold(1e-6));
  EXPECT_EQ(r.latent, 5u);
  EXPECT_EQ(r.f1, 1.0);
  // Negatives sit at 0, so W1 is the mean positive magnitude,
  // E[exp(N(0, 0.5^2))] = exp(0.125).
  EXPECT_NEAR(r.wasserstein, std::exp(0.125), 0.1 * std::exp(0.125));

  const auto again = run_probe(m, p.task, SparsifyMode::threshold(1e-6));
  EXPECT_EQ(again.latent, r.latent);
  EXPECT_EQ(again.f1, r.f1);
  EXPECT_EQ(again.wasserstein, r.wasserstein);
}

TEST(RunProbe, SequencesUseMaxOverTokens) {
  const auto p = planted_task(2, 8, 22);
  const auto m = embed_planted_dictionary(p.spec, 8);
  const auto s = probe_samples(m, p.task.eval, SparsifyMode::threshold(1e-6));
  EXPECT_EQ(s.labels.size(), 3000u / 8);
  const auto r = run_probe(m, p.task, SparsifyMode::threshold(1e-6));
  EXPECT_EQ(r.latent, 2u);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(RunProbe, ShuffledLabelsMatchPermutationNull) {
  auto p = planted_task(5, 0, 23);
  const auto m = embed_planted_dictionary(p.spec, 8);
  Rng rng(99);
  auto labels = *p.task.eval.labels();
  shuffle_portable(labels, rng);
  p.task.eval.set_labels(labels);
  const auto r = run_probe(m, p.task, SparsifyMode::threshold(1e-6));

  const auto eval = probe_samples(m, p.task.eval, SparsifyMode::threshold(1e-6));
  Labels preds(eval.labels.size());
  for (std::size_t e = 0; e < preds.size(); ++e) preds[e] = eval.acts(e, r.latent) > r.threshold;
  const auto null = permutation_null(preds, eval.labels, 500, rng);
  EXPECT_LT(std::abs(r.f1 - null.mean), 3.0 * null.sd);
}

TEST(RunProbe, NeverActiveLatentHasZeroDistance) {
  std::vector<double> zeros_pos(5, 0.0), zeros_neg(7, 0.0);
  EXPECT_EQ(wasserstein1(zeros_pos, zeros_neg), 0.0);
}

TEST(ProbeCsv, Format) {
  std::ostringstream out;
  write_probe_header(out);
  write_probe_row(out, {"t", 3, 0.5, 1.0, 0.8, 0.0123});
  write_probe_row(out, {"u", 0, -INFINITY, 0.6, 0.5, 0.0});
  EXPECT_EQ(out.str(), "task,latent,threshold,f1_percent,w1_e3\nt,3,0.5,80,12.3\nu,0,-inf,50,0\n");
}

}  // namespace
}  // namespace fmx
