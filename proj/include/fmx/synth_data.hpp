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

// Synthetic multi-layer activations with planted single-layer and
// cross-layer features, the "FMXA1" activation cache, and recovery scoring
// against the planted dictionary.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/model.hpp"
#include "fmx/tensor.hpp"
#include "fmx/training.hpp"

namespace fmx {

enum class DirectionPolicy {
  kShared,       // one unit direction reused at every layer of the support
  kIndependent,  // a fresh unit direction per layer
};

struct PlantedFeature {
  std::vector<std::size_t> support;         // sorted layer indices, nonempty
  std::vector<std::vector<double>> directions;  // one unit d-vector per support layer
  double firing_prob = 0.05;
};

struct SynthSpec {
  std::size_t d = 0;
  std::size_t layers = 0;
  std::vector<PlantedFeature> features;
  // Magnitudes are exp(N(mu, sigma^2)).
  double magnitude_mu = 0.0;
  double magnitude_sigma = 0.5;
  double noise_sigma = 0.0;
  // Label = 1 iff this feature fired on the token.
  std::optional<std::size_t> concept_feature;

  // Throws ConfigError.
  void validate() const;
};

struct SynthConfig {
  std::size_t d = 32;
  std::size_t layers = 8;
  std::size_t single_layer_features = 32;
  std::size_t cross_layer_features = 32;
  std::size_t cross_support = 4;  // contiguous window length
  DirectionPolicy policy = DirectionPolicy::kShared;
  double firing_prob = 0.05;
  double magnitude_mu = 0.0;
  double magnitude_sigma = 0.5;
  double noise_sigma = 0.05;
  // Gram-Schmidt the directions that share a layer (needs at most d of them).
  bool orthogonal = false;
  std::optional<std::size_t> concept_feature;
};

// Single-layer features come first, placed round-robin over layers; cross-
// layer features follow, each on a random contiguous window.
SynthSpec build_spec(const SynthConfig& cfg, Rng& rng);

struct SynthSample {
  ActivationBatch batch;
  Matrix<double> firing;  // T x n_features, magnitude or 0
};

// Carries labels when the spec has a concept feature. With `sequence_length`
// > 0, consecutive runs of that many tokens share a sequence id.
SynthSample generate(const SynthSpec& spec, std::size_t tokens, Rng& rng,
                     std::size_t sequence_length = 0);

// ---------------------------------------------------------------------------
// "FMXA1" cache. Layout is documented in docs/formats.md.

inline constexpr std::uint32_t kCacheVersion = 1;

std::vector<char> serialize_cache(const ActivationBatch& batch);
// Throws FormatError (with byte offset) on malformed input.
ActivationBatch deserialize_cache(std::vector<char> bytes);

void write_cache(const ActivationBatch& batch, const std::filesystem::path& path);
ActivationBatch read_cache(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Recovery.

struct FeatureMatch {
  std::size_t feature = 0;
  std::optional<std::size_t> latent;  // unmatched when d_sae < n_features
  double correlation = 0.0;           // |Pearson| between firing and latent activation
  double latent_cf = 0.0;             // NaN when not supplied or undefined
};

struct RecoveryReport {
  std::vector<FeatureMatch> matches;  // ordered by feature index
  double mean_correlation = 0.0;
};

// Greedy one-to-one assignment by descending |Pearson| over the batch.
// `latent_cf` (optional, size d_sae) annotates each match.
RecoveryReport recovery_score(const CrosscoderModel& m, const Matrix<double>& firing,
                              const ActivationBatch& batch, const SparsifyMode& mode,
                              std::span<const double> latent_cf = {});

// Dense model whose latent f reads and writes feature f exactly: encoder
// fiber dir_l / |support| and decoder fiber dir_l on the support, zero
// elsewhere. d_sae defaults to the feature count.
CrosscoderModel embed_planted_dictionary(const SynthSpec& spec, std::size_t k,
                                         std::size_t d_sae = 0);

}  // namespace fmx
