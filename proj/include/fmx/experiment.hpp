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

// Train-and-evaluate helpers shared by the sweep command and the synthetic
// comparison suite: parameter-matched model construction, one training arm,
// and the metrics reported per arm.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/diagnostics.hpp"
#include "fmx/model.hpp"
#include "fmx/probing.hpp"
#include "fmx/synth_data.hpp"
#include "fmx/training.hpp"

namespace fmx {

// Ranks for `variant` at `reduction` times the dense weight budget
// 2 d d_sae L. TR: select_tr_ranks on the reduced budget; CP: the full-budget
// rank scaled by cp_sweep_rank; dense: zeros (reduction must be 1).
std::array<std::size_t, 3> matched_ranks(WeightDims dims, Variant variant, double reduction = 1.0);

struct ArmSpec {
  Variant variant = Variant::kDense;
  double mask_p = 0.0;
  double reduction = 1.0;
};

struct ArmResult {
  ArmSpec spec;
  CrosscoderModel model;
  std::vector<StepMetrics> log;
  double train_seconds = 0.0;
};

// Initializes from `init_seed` and trains on `data` (shuffled by cfg.seed).
// cfg.mask_p is overridden by arm.mask_p.
ArmResult train_arm(WeightDims dims, const ArmSpec& arm, std::size_t k,
                    std::shared_ptr<const ActivationBatch> data, TrainConfig cfg,
                    std::uint64_t init_seed, std::size_t epochs = 0);

struct ArmMetrics {
  ReconMetrics recon;
  CoherenceReport coherence;
  double mean_cf = 0.0;
  double mean_cn = 0.0;
  std::optional<RecoveryReport> recovery;
  std::optional<ProbeResult> probe;
};

// Reconstruction and coherence on `eval`; recovery when `firing` is given;
// a probe when `probe` is given.
ArmMetrics evaluate_arm(const CrosscoderModel& m, const ActivationBatch& eval,
                        const SparsifyMode& mode, const Matrix<double>* firing = nullptr,
                        const ProbeTask* probe = nullptr);

// Splits a labelled batch into train and eval parts: the first `fraction`
// of sequences (or tokens, without sequence ids) go to train.
ProbeTask split_probe_task(const ActivationBatch& batch, double fraction, const std::string& name);

}  // namespace fmx
