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

#include "fmx/experiment.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "fmx/errors.hpp"

namespace fmx {

std::array<std::size_t, 3> matched_ranks(WeightDims dims, Variant variant, double reduction) {
  if (!(reduction > 0.0 && reduction <= 1.0)) throw ConfigError("reduction must lie in (0, 1]");
  const std::size_t budget = 2 * dims.d * dims.d_sae * dims.layers;
  switch (variant) {
    case Variant::kDense:
      if (reduction != 1.0) throw ConfigError("the dense crosscoder has no rank to reduce");
      return {0, 0, 0};
    case Variant::kTr: {
      const auto reduced = static_cast<std::size_t>(std::floor(double(budget) * reduction));
      return select_tr_ranks(dims.d, dims.d_sae, dims.layers, reduced);
    }
    case Variant::kCp:
      return {cp_sweep_rank(select_cp_rank(dims.d, dims.d_sae, dims.layers, budget), reduction), 0,
              0};
  }
  throw ConfigError("unknown variant");
}

ArmResult train_arm(WeightDims dims, const ArmSpec& arm, std::size_t k,
                    std::shared_ptr<const ActivationBatch> data, TrainConfig cfg,
                    std::uint64_t init_seed, std::size_t epochs) {
  Rng init(init_seed);
  auto model = init_model(dims, arm.variant, matched_ranks(dims, arm.variant, arm.reduction), k,
                          arm.mask_p, init);
  cfg.mask_p = arm.mask_p;
  InMemorySource source(std::move(data), cfg.seed, epochs);
  ArmResult out{arm, {}, {}, 0.0};
  const auto start = std::chrono::steady_clock::now();
  auto result = train(std::move(model), source, cfg,
                      [&](const StepMetrics& s) { out.log.push_back(s); });
  out.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.model = std::move(result.model);
  return out;
}

ArmMetrics evaluate_arm(const CrosscoderModel& m, const ActivationBatch& eval,
                        const SparsifyMode& mode, const Matrix<double>* firing,
                        const ProbeTask* probe) {
  ArmMetrics out;
  out.recon = recon_metrics(m, eval, mode);
  out.coherence = coherence_report(m, eval, mode);
  out.mean_cf = defined_mean(out.coherence.cf);
  out.mean_cn = defined_mean(out.coherence.norm.cn);
  if (firing) out.recovery = recovery_score(m, *firing, eval, mode, out.coherence.cf);
  if (probe) out.probe = run_probe(m, *probe, mode);
  return out;
}

ProbeTask split_probe_task(const ActivationBatch& batch, double fraction, const std::string& name) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("probe.train_fraction must lie in (0, 1)");
  if (!batch.labels()) throw DataError("probe data has no labels");
  std::size_t cut = static_cast<std::size_t>(std::round(fraction * double(batch.tokens())));
  // Keep sequences whole.
  if (const auto& ids = batch.sequence_ids()) {
    while (cut > 0 && cut < batch.tokens() && (*ids)[cut] == (*ids)[cut - 1]) ++cut;
  }
  ProbeTask task{name, batch.slice(0, cut), batch.slice(cut, batch.tokens())};
  task.validate();
  return task;
}

}  // namespace fmx
