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

// Single-latent sparse probing: choose the latent and threshold that best
// separate a binary task by F1 on a train split, then report F1 and the
// 1-Wasserstein distance between the two classes' activations on a held-out
// split.

#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/model.hpp"
#include "fmx/tensor.hpp"
#include "fmx/training.hpp"

namespace fmx {

// Both splits carry labels; both classes must be present in each.
struct ProbeTask {
  std::string name;
  ActivationBatch train;
  ActivationBatch eval;

  void validate() const;
};

struct ProbeResult {
  std::string task;
  std::size_t latent = 0;
  double threshold = 0.0;  // may be -inf: the all-positive rule
  double train_f1 = 0.0;
  double f1 = 0.0;
  double wasserstein = 0.0;
};

// 2TP / (2TP + FP + FN), 0 when the denominator is 0.
double f1(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels);

// Probe samples: one activation vector per example plus its label. With
// sequence ids, an example is a sequence: activations are max-over-token
// and the label is 1 iff any of its tokens is labelled 1.
struct ProbeSamples {
  Matrix<double> acts;  // examples x d_sae
  std::vector<std::uint8_t> labels;
};

ProbeSamples probe_samples(const CrosscoderModel& m, const ActivationBatch& split,
                           const SparsifyMode& mode);

struct LatentChoice {
  std::size_t latent = 0;
  double threshold = 0.0;
  double f1 = 0.0;
};

// Rule: positive iff activation > threshold. Candidate thresholds per latent
// are -inf, 0 and every observed value. Ties prefer the smaller threshold,
// then the lower latent. Throws DataError on a single-class split.
LatentChoice select_best_latent(const Matrix<double>& acts, std::span<const std::uint8_t> labels);
LatentChoice select_best_latent(const CrosscoderModel& m, const ActivationBatch& train,
                                const SparsifyMode& mode);

// Empirical 1-D W1 between two samples. Throws DataError on empty input.
double wasserstein1(std::span<const double> a, std::span<const double> b);

ProbeResult run_probe(const CrosscoderModel& m, const ProbeTask& task, const SparsifyMode& mode);

// Null distribution of F1 for fixed predictions under label permutation.
struct NullStats {
  double mean = 0.0;
  double sd = 0.0;
};
NullStats permutation_null(std::span<const std::uint8_t> preds,
                           std::span<const std::uint8_t> labels, std::size_t draws, Rng& rng);

// "task,latent,threshold,f1_percent,w1_e3": F1 in percent and W1 x 10^3.
void write_probe_header(std::ostream& out);
void write_probe_row(std::ostream& out, const ProbeResult& r);

}  // namespace fmx
