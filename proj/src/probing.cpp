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

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "fmx/errors.hpp"

namespace fmx {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_both_classes(std::span<const std::uint8_t> labels, const std::string& what) {
  const auto pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
    throw DataError(what + " has a single class");
  }
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

}  // namespace

void ProbeTask::validate() const {
  if (!train.labels() || !eval.labels()) throw DataError("probe task " + name + " lacks labels");
  if (train.empty() || eval.empty()) throw DataError("probe task " + name + " has an empty split");
  require_both_classes(*train.labels(), "probe task " + name + " train split");
  require_both_classes(*eval.labels(), "probe task " + name + " eval split");
}

double f1(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels) {
  if (preds.size() != labels.size()) throw DataError("f1: length mismatch");
  if (preds.empty()) throw DataError("f1: empty input");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    tp += preds[n] && labels[n];
    fp += preds[n] && !labels[n];
    fn += !preds[n] && labels[n];
  }
  return f1_from_counts(tp, fp, fn);
}

ProbeSamples probe_samples(const CrosscoderModel& m, const ActivationBatch& split,
                           const SparsifyMode& mode) {
  if (!split.labels()) throw DataError("probe split has no labels");
  const auto& labels = *split.labels();
  const std::size_t width = m.dims().d_sae;
  const auto& seq = split.sequence_ids();

  // Example index per token: the token itself, or its sequence in order of
  // first appearance.
  std::vector<std::size_t> example(split.tokens());
  std::size_t examples = split.tokens();
  if (seq) {
    std::unordered_map<std::uint32_t, std::size_t> index;
    for (std::size_t t = 0; t < split.tokens(); ++t) {
      example[t] = index.try_emplace((*seq)[t], index.size()).first->second;
    }
    examples = index.size();
  } else {
    std::iota(example.begin(), example.end(), std::size_t{0});
  }

  ProbeSamples out{Matrix<double>(examples, width), std::vector<std::uint8_t>(examples, 0)};
  const std::size_t block =
      mode.kind == SparsifyMode::Kind::kBatchTopK && mode.chunk > 0 ? mode.chunk : 4096;
  for (std::size_t begin = 0; begin < split.tokens(); begin += block) {
    const SparseCode code = encode(m, split.slice(begin, begin + block), mode);
    for (std::size_t t = 0; t < code.tokens(); ++t) {
      const std::size_t e = example[begin + t];
      const auto idx = code.indices(t);
      const auto val = code.values(t);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        out.acts(e, idx[n]) = std::max(out.acts(e, idx[n]), val[n]);
      }
    }
  }
  for (std::size_t t = 0; t < split.tokens(); ++t) {
    out.labels[example[t]] |= labels[t];
  }
  return out;
}

LatentChoice select_best_latent(const Matrix<double>& acts, std::span<const std::uint8_t> labels) {
  if (acts.rows() != labels.size()) throw DataError("probe: activation/label count mismatch");
  if (acts.rows() == 0) throw DataError("probe: empty train split");
  require_both_classes(labels, "probe train split");
  const std::size_t total_pos =
      static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  const std::size_t total_neg = labels.size() - total_pos;

  LatentChoice best{0, kNegInf, -1.0};
  std::vector<std::pair<double, std::uint8_t>> col(acts.rows());
  for (std::size_t i = 0; i < acts.cols(); ++i) {
    for (std::size_t t = 0; t < acts.rows(); ++t) col[t] = {acts(t, i), labels[t]};
    std::sort(col.begin(), col.end());

    // Candidates in ascending order so a strict improvement keeps the
    // smallest threshold among equals.
    std::vector<double> candidates{kNegInf, 0.0};
    for (const auto& [v, y] : col) candidates.push_back(v);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    std::size_t below = 0;  // entries with value <= current threshold
    std::size_t pos_below = 0;
    double latent_best = -1.0;
    double latent_thr = kNegInf;
    for (const double thr : candidates) {
      while (below < col.size() && col[below].first <= thr) {
        pos_below += col[below].second;
        ++below;
      }
      const std::size_t tp = total_pos - pos_below;
      const std::size_t fp = total_neg - (below - pos_below);
      const double score = f1_from_counts(tp, fp, pos_below);
      if (score > latent_best) {
        latent_best = score;
        latent_thr = thr;
      }
    }
    if (latent_best > best.f1) best = {i, latent_thr, latent_best};
  }
  return best;
}

LatentChoice select_best_latent(const CrosscoderModel& m, const ActivationBatch& train,
                                const SparsifyMode& mode) {
  const auto s = probe_samples(m, train, mode);
  return select_best_latent(s.acts, s.labels);
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("wasserstein1: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  if (x.size() == y.size()) {
    double s = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) s += std::abs(x[n] - y[n]);
    return s / double(x.size());
  }
  // Quantile functions are step functions with breaks at n/|x| and m/|y|.
  // Walk the merged grid in integer units of 1/(|x| |y|).
  const std::size_t nx = x.size();
  const std::size_t ny = y.size();
  std::size_t ix = 0, iy = 0;
  std::size_t q = 0;  // current position in units
  const std::size_t total = nx * ny;
  double s = 0.0;
  while (q < total) {
    const std::size_t next = std::min((ix + 1) * ny, (iy + 1) * nx);
    s += double(next - q) * std::abs(x[ix] - y[iy]);
    q = next;
    if (q == (ix + 1) * ny) ++ix;
    if (q == (iy + 1) * nx) ++iy;
  }
  return s / double(total);
}

ProbeResult run_probe(const CrosscoderModel& m, const ProbeTask& task, const SparsifyMode& mode) {
  task.validate();
  const auto train = probe_samples(m, task.train, mode);
  const LatentChoice choice = select_best_latent(train.acts, train.labels);
  const auto eval = probe_samples(m, task.eval, mode);
  require_both_classes(eval.labels, "probe task " + task.name + " eval split");

  std::vector<std::uint8_t> preds(eval.labels.size());
  std::vector<double> pos, neg;
  for (std::size_t e = 0; e < preds.size(); ++e) {
    const double a = eval.acts(e, choice.latent);
    preds[e] = a > choice.threshold;
    (eval.labels[e] ? pos : neg).push_back(a);
  }
  ProbeResult r;
  r.task = task.name;
  r.latent = choice.latent;
  r.threshold = choice.threshold;
  r.train_f1 = choice.f1;
  r.f1 = f1(preds, eval.labels);
  r.wasserstein = wasserstein1(pos, neg);
  return r;
}

NullStats permutation_null(std::span<const std::uint8_t> preds,
                           std::span<const std::uint8_t> labels, std::size_t draws, Rng& rng) {
  if (draws < 2) throw ConfigError("permutation_null needs at least 2 draws");
  std::vector<std::uint8_t> shuffled(labels.begin(), labels.end());
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    shuffle_portable(shuffled, rng);
    const double v = f1(preds, shuffled);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / double(draws);
  const double var = std::max(0.0, (sum_sq - double(draws) * mean * mean) / double(draws - 1));
  return {mean, std::sqrt(var)};
}

void write_probe_header(std::ostream& out) { out << "task,latent,threshold,f1_percent,w1_e3\n"; }

void write_probe_row(std::ostream& out, const ProbeResult& r) {
  out << r.task << ',' << r.latent << ',';
  if (std::isinf(r.threshold)) {
    out << "-inf";
  } else {
    out << std::setprecision(10) << r.threshold;
  }
  out << ',' << std::setprecision(10) << 100.0 * r.f1 << ',' << 1000.0 * r.wasserstein << '\n';
}

}  // namespace fmx
