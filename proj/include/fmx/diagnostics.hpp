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

// Norm and functional coherence, reconstruction metrics, and their text
// reports.

#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/model.hpp"
#include "fmx/tensor.hpp"

namespace fmx {

inline constexpr double kSensitivityEpsilon = 1e-8;

// Undefined coherence values are NaN throughout.
struct NormCoherence {
  Matrix<double> norms;   // d_sae x L, ||D[:, i, l]||
  std::vector<double> cn;
};

NormCoherence norm_coherence(const CrosscoderModel& m);

// sum_l row[l] / max_l row[l]; NaN when the max is 0 (or the row is empty).
double coherence_ratio(std::span<const double> row);

struct Sensitivity {
  Matrix<double> s;                        // d_sae x L
  std::vector<std::size_t> active_counts;  // tokens with z_i(x) > 0
};

// S[i, l] = mean over tokens with z_i(x) > 0 of
// |z_i(x) - z_i(M_l x)| / (z_i(x) + eps), where M_l zeroes layer l. Both
// passes use `mode`; BatchTopK re-selects within the same block of tokens.
Sensitivity layer_sensitivity(const CrosscoderModel& m, const ActivationBatch& data,
                              const SparsifyMode& mode, double eps = kSensitivityEpsilon);

std::vector<double> functional_coherence(const Matrix<double>& s);

struct CoherenceReport {
  NormCoherence norm;
  Sensitivity sensitivity;
  std::vector<double> cf;

  std::size_t latents() const { return cf.size(); }
};

CoherenceReport coherence_report(const CrosscoderModel& m, const ActivationBatch& data,
                                 const SparsifyMode& mode);

// Mean of the defined (non-NaN) entries; NaN if none.
double defined_mean(std::span<const double> values);
std::size_t defined_count(std::span<const double> values);

struct Histogram {
  double lo = 1.0;
  double width = 0.25;
  std::vector<std::size_t> counts;  // bin b covers [lo + b w, lo + (b + 1) w), last bin closed
};

// Bins over [1, layers]; NaN entries are skipped.
Histogram coherence_histogram(std::span<const double> values, std::size_t layers,
                              double width = 0.25);

struct ReconMetrics {
  double mse = 0.0;          // per dimension: mean_{t,l} ||x - x_hat||^2 / d
  double mse_summed = 0.0;   // mean_{t,l} ||x - x_hat||^2
  double ev = 0.0;           // pooled over layers, per-layer means
  bool ev_defined = true;    // false when the data has zero variance
  double cs = 0.0;           // mean_{t,l} cos(x, x_hat)
  std::vector<double> layer_mse;  // per dimension, one per layer
  std::size_t tokens = 0;
};

// Encodes and decodes in blocks of `mode.chunk` tokens (4096 when unset).
ReconMetrics recon_metrics(const CrosscoderModel& m, const ActivationBatch& data,
                           const SparsifyMode& mode);

// Accumulator for callers that already hold reconstructions.
class ReconAccumulator {
 public:
  // `means` holds per-(layer, coordinate) means over the whole evaluation set.
  ReconAccumulator(std::size_t layers, std::size_t dim, std::vector<double> means);
  void add(const ActivationBatch& x, std::span<const double> recon);
  ReconMetrics finish() const;

 private:
  std::size_t layers_;
  std::size_t dim_;
  std::vector<double> means_;
  std::size_t tokens_ = 0;
  double err_ = 0.0;
  double var_ = 0.0;
  double cos_ = 0.0;
  std::vector<double> layer_err_;
};

// Reports. Each writes a header row then one row per item.
void write_coherence_csv(std::ostream& out, const CoherenceReport& report);
void write_histogram_csv(std::ostream& out, const Histogram& cn, const Histogram& cf);
void write_recon_csv(std::ostream& out, const ReconMetrics& metrics);

}  // namespace fmx
