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

// Reconstruction objective with stochastic layer masking, initialization,
// Adam with global-norm clipping, and the training loop.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/model.hpp"
#include "fmx/sparse_code.hpp"

namespace fmx {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) built from the top 53 bits, so draws are identical
// across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
// Fisher-Yates on uniform01, so orders do not depend on the standard
// library's shuffle.
template <typename T>
void shuffle_portable(std::vector<T>& v, Rng& rng) {
  for (std::size_t n = v.size(); n > 1; --n) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    std::swap(v[n - 1], v[std::min(j, n - 1)]);
  }
}

// Standard normal via Box-Muller on uniform01.
double standard_normal(Rng& rng);

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 1.0;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  double mask_p = 0.0;
  std::uint64_t seed = 0;
  // Metrics record every `log_every` steps (and on the last step).
  std::size_t log_every = 10;
  // Batches prepared ahead by a producer thread; 0 runs synchronously.
  std::size_t prefetch = 2;

  // Throws ConfigError.
  void validate() const;
};

struct LayerMask {
  std::size_t tokens = 0;
  std::size_t layers = 0;
  std::vector<std::uint8_t> keep;  // tokens x layers, 1 = layer kept

  bool kept(std::size_t t, std::size_t l) const { return keep[t * layers + l] != 0; }
};

// Zeroes each (token, layer) slice independently with probability p.
// Throws ConfigError for p outside [0, 1].
std::pair<ActivationBatch, LayerMask> apply_layer_mask(const ActivationBatch& batch, double p,
                                                       Rng& rng);

struct LossResult {
  double loss = 0.0;
  CrosscoderModel grad;  // same shape as the model; empty when not requested
  SparseCode code;       // the selection used for the forward pass
};

// (1 / L) mean_t sum_l ||clean_tl - x_hat_l(masked_t)||^2 and its gradient.
// The code is BatchTopK over `masked`, or, when `fixed_selection` is given,
// exactly that set of (token, latent) pairs with values ReLU(preact).
// Gradients pass only through selected coordinates. Throws DataError on
// non-finite activations.
LossResult recon_loss(const CrosscoderModel& m, const ActivationBatch& clean,
                      const ActivationBatch& masked, const SparseCode* fixed_selection = nullptr,
                      bool with_grad = true);

// Zero biases; weights i.i.d. Gaussian so every element of the full tensor
// has variance 2 / fan_in (fan_in = d for the encoder, d_sae for the decoder).
CrosscoderModel init_model(WeightDims dims, Variant variant, std::array<std::size_t, 3> ranks,
                           std::size_t k, double mask_p, Rng& rng);

// Square root of the summed squares over every array.
double global_norm(const std::vector<std::span<const double>>& arrays);

// Scales the arrays in place so their global norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(const std::vector<std::span<double>>& arrays, double max_norm);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

AdamState make_adam_state(const std::vector<std::span<const double>>& params);

// One clipped Adam update with bias correction. Throws TrainingError naming
// the step (1-based) when a gradient entry is not finite.
void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads, AdamState& state,
               const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Data and the loop.

class DataSource {
 public:
  virtual ~DataSource() = default;
  // Next batch of at most `batch_size` tokens, or nullopt when exhausted.
  virtual std::optional<ActivationBatch> next(std::size_t batch_size) = 0;
};

// Serves shuffled passes over an in-memory batch. `epochs` = 0 cycles
// forever.
class InMemorySource : public DataSource {
 public:
  InMemorySource(std::shared_ptr<const ActivationBatch> data, std::uint64_t seed,
                 std::size_t epochs = 0);
  std::optional<ActivationBatch> next(std::size_t batch_size) override;

 private:
  void reshuffle();

  std::shared_ptr<const ActivationBatch> data_;
  Rng rng_;
  std::size_t epochs_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_active = 0.0;  // active latents per token
  double wall_ms = 0.0;
};

// One NDJSON line (no trailing newline).
std::string to_ndjson(const StepMetrics& m);

struct TrainResult {
  CrosscoderModel model;
  std::vector<StepMetrics> log;
  std::size_t steps_run = 0;
  // The source ran dry before cfg.steps.
  bool truncated = false;
};

// Draw batch, mask it (cfg.mask_p, separate RNG stream), encode the masked
// input, score against the clean batch, clip, Adam. `on_log` sees each
// logged record as it is produced.
TrainResult train(CrosscoderModel model, DataSource& source, const TrainConfig& cfg,
                  const std::function<void(const StepMetrics&)>& on_log = {});

}  // namespace fmx
