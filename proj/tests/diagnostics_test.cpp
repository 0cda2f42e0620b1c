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

#include "fmx/diagnostics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "fmx/synth_data.hpp"
#include "fmx/training.hpp"
#include "test_util.hpp"

namespace fmx {
namespace {

// Dense model whose decoder fiber (i, l) is `scale[l]` times e_0.
CrosscoderModel model_with_decoder_norms(const std::vector<double>& scale) {
  auto m = make_model({2, 1, scale.size()}, Variant::kDense, {}, 1, 0.0);
  auto& dec = std::get<DenseWeights3<double>>(m.decoder);
  for (std::size_t l = 0; l < scale.size(); ++l) dec.at(0, 0, l) = scale[l];
  return m;
}

TEST(NormCoherence, WorkedExamples) {
  EXPECT_DOUBLE_EQ(norm_coherence(model_with_decoder_norms(std::vector<double>(8, 2.0))).cn[0], 8.0);
  EXPECT_DOUBLE_EQ(norm_coherence(model_with_decoder_norms({0, 0, 3, 0})).cn[0], 1.0);
  EXPECT_DOUBLE_EQ(norm_coherence(model_with_decoder_norms({2, 1, 1, 0})).cn[0], 2.0);
  EXPECT_TRUE(std::isnan(norm_coherence(model_with_decoder_norms({0, 0, 0})).cn[0]));
}

TEST(NormCoherence, InvariantToDecoderScale) {
  Rng rng(1);
  auto m = init_model({6, 10, 4}, Variant::kTr, {2, 3, 2}, 2, 0.0, rng);
  const auto before = norm_coherence(m).cn;
  for (auto& v : std::get<TrFactors<double>>(m.decoder).g2.flat()) v *= 3.5;
  const auto after = norm_coherence(m).cn;
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
}

TEST(Coherence, BoundsHoldForRandomModels) {
  Rng rng(2);
  const WeightDims dims{8, 24, 6};
  const auto data = testing::random_batch(512, dims.layers, dims.d, rng, 1.0);
  for (int v = 0; v < 3; ++v) {
    const auto m = init_model(dims, Variant(v), {2, 4, 3}, 4, 0.0, rng);
    const auto r = coherence_report(m, data, SparsifyMode::batch());
    for (std::size_t i = 0; i < dims.d_sae; ++i) {
      for (double c : {r.norm.cn[i], r.cf[i]}) {
        if (std::isnan(c)) continue;
        EXPECT_GE(c, 1.0);
        EXPECT_LE(c, double(dims.layers));
      }
    }
  }
}

SynthSample single_feature_data(std::vector<std::size_t> support, std::size_t layers, Rng& rng,
                                SynthSpec& spec) {
  spec = SynthSpec{};
  spec.d = 4;
  spec.layers = layers;
  PlantedFeature f;
  f.support = std::move(support);
  f.directions.assign(f.support.size(), {0.0, 1.0, 0.0, 0.0});
  f.firing_prob = 0.3;
  spec.features.push_back(f);
  return generate(spec, 400, rng);
}

TEST(FunctionalCoherence, SingleLayerLatentIsOne) {
  Rng rng(3);
  SynthSpec spec;
  const auto s = single_feature_data({2}, 5, rng, spec);
  const auto m = embed_planted_dictionary(spec, 1);
  const auto r = coherence_report(m, s.batch, SparsifyMode::threshold(0.0));
  EXPECT_EQ(r.cf[0], 1.0);
  for (std::size_t l = 0; l < 5; ++l) {
    if (l != 2) EXPECT_EQ(r.sensitivity.s(0, l), 0.0);
  }
  EXPECT_NEAR(r.sensitivity.s(0, 2), 1.0, 1e-6);
}

TEST(FunctionalCoherence, SymmetricFixtureReachesL) {
  Rng rng(4);
  SynthSpec spec;
  const std::size_t layers = 8;
  std::vector<std::size_t> all(layers);
  std::iota(all.begin(), all.end(), 0);
  const auto s = single_feature_data(all, layers, rng, spec);
  const auto m = embed_planted_dictionary(spec, 1);
  const auto r = coherence_report(m, s.batch, SparsifyMode::threshold(0.0));
  EXPECT_GE(r.cf[0], 0.95 * layers);
  EXPECT_NEAR(r.cf[0], double(layers), 1e-6);
  EXPECT_NEAR(r.norm.cn[0], double(layers), 1e-12);
}

TEST(FunctionalCoherence, ZeroRowIsUndefined) {
  Matrix<double> s(2, 3);
  s(1, 0) = 0.5;
  s(1, 1) = 0.25;
  const auto cf = functional_coherence(s);
  EXPECT_TRUE(std::isnan(cf[0]));
  EXPECT_DOUBLE_EQ(cf[1], 1.5);
  EXPECT_EQ(defined_count(cf), 1u);
  EXPECT_DOUBLE_EQ(defined_mean(cf), 1.5);
}

TEST(Recon, AccumulatorExamples) {
  // Two tokens, one layer, d = 2.
  ActivationBatch x(2, 1, 2, {1.0f, 0.0f, 3.0f, 4.0f});
  const auto means = layer_means(x);  // (2, 2)
  {
    ReconAccumulator acc(1, 2, means);
    acc.add(x, std::vector<double>{1, 0, 3, 4});
    const auto r = acc.finish();
    EXPECT_EQ(r.mse, 0.0);
    EXPECT_EQ(r.ev, 1.0);
    EXPECT_NEAR(r.cs, 1.0, 1e-15);
  }
  {
    ReconAccumulator acc(1, 2, means);
    acc.add(x, std::vector<double>{-1, 0, -3, -4});
    const auto r = acc.finish();
    EXPECT_NEAR(r.cs, -1.0, 1e-15);
    // ||2x||^2 = 4 and 100, averaged over tokens then divided by d.
    EXPECT_DOUBLE_EQ(r.mse_summed, 52.0);
    EXPECT_DOUBLE_EQ(r.mse, 26.0);
  }
  {
    ReconAccumulator acc(1, 2, means);
    acc.add(x, std::vector<double>{2, 2, 2, 2});
    acc.add(ActivationBatch(0, 1, 2), {});
    const auto r = acc.finish();
    EXPECT_NEAR(r.ev, 0.0, 1e-15);
  }
  {
    ActivationBatch zero(1, 1, 2);
    ReconAccumulator acc(1, 2, {0.0, 0.0});
    acc.add(zero, std::vector<double>{0, 0});
    const auto r = acc.finish();
    EXPECT_EQ(r.cs, 1.0);  // both zero
    EXPECT_FALSE(r.ev_defined);
  }
}

TEST(Recon, EmbeddedDictionaryIsPerfect) {
  Rng rng(5);
  SynthConfig cfg;
  cfg.d = 16;
  cfg.layers = 4;
  cfg.single_layer_features = 4;
  cfg.cross_layer_features = 4;
  cfg.orthogonal = true;
  cfg.noise_sigma = 0.0;
  cfg.firing_prob = 0.3;
  const auto spec = build_spec(cfg, rng);
  const auto s = generate(spec, 1000, rng);
  const auto m = embed_planted_dictionary(spec, 8);
  // A small threshold drops float round-off preactivations of orthogonal
  // features, which would otherwise put ~1e-8 output on all-zero layers.
  const auto r = recon_metrics(m, s.batch, SparsifyMode::threshold(1e-6));
  EXPECT_NEAR(r.mse, 0.0, 1e-10);
  EXPECT_NEAR(r.ev, 1.0, 1e-9);
  EXPECT_NEAR(r.cs, 1.0, 1e-6);
}

TEST(Recon, LayerContributionsSumToPooled) {
  Rng rng(6);
  const WeightDims dims{8, 32, 5};
  const auto data = testing::random_batch(700, dims.layers, dims.d, rng, 1.0);
  const auto m = init_model(dims, Variant::kCp, {12, 0, 0}, 4, 0.0, rng);
  const auto r = recon_metrics(m, data, SparsifyMode::batch(256));
  ASSERT_EQ(r.layer_mse.size(), dims.layers);
  const double sum = std::accumulate(r.layer_mse.begin(), r.layer_mse.end(), 0.0) / dims.layers;
  EXPECT_NEAR(sum, r.mse, 1e-6 * r.mse);
  EXPECT_EQ(r.tokens, 700u);

  std::ostringstream csv;
  write_recon_csv(csv, r);
  EXPECT_EQ(csv.str().rfind("scope,mse,mse_summed,ev,cs,mse_contribution\npooled,", 0), 0u);
}

TEST(Histogram, CountsCoverEveryDefinedLatent) {
  const std::vector<double> values{1.0, 1.24, 1.25, 3.9, 4.0, std::nan(""), 2.5};
  const auto h = coherence_histogram(values, 4);
  ASSERT_EQ(h.counts.size(), 12u);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), 6u);
  EXPECT_EQ(h.counts[0], 2u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[6], 1u);
  EXPECT_EQ(h.counts[11], 2u);
}

TEST(Csv, CoherenceRowsPrintNan) {
  CoherenceReport r;
  r.norm.cn = {2.0};
  r.cf = {std::nan("")};
  r.sensitivity.active_counts = {0};
  std::ostringstream out;
  write_coherence_csv(out, r);
  EXPECT_EQ(out.str(), "latent,cn,cf,active_count\n0,2,nan,0\n");
}

}  // namespace
}  // namespace fmx
