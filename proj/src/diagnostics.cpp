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

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

#include "fmx/errors.hpp"

namespace fmx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t block_size(const SparsifyMode& mode) {
  return mode.kind == SparsifyMode::Kind::kBatchTopK && mode.chunk > 0 ? mode.chunk : 4096;
}

}  // namespace

double coherence_ratio(std::span<const double> row) {
  double sum = 0.0;
  double max = 0.0;
  for (const double v : row) {
    sum += v;
    max = std::max(max, v);
  }
  if (!(max > 0.0)) return kNaN;
  // sum <= L * max in exact arithmetic; keep rounding from leaving [1, L].
  return std::clamp(sum / max, 1.0, static_cast<double>(row.size()));
}

NormCoherence norm_coherence(const CrosscoderModel& m) {
  const WeightDims dims = m.dims();
  NormCoherence out{Matrix<double>(dims.d_sae, dims.layers), std::vector<double>(dims.d_sae)};
  for (std::size_t i = 0; i < dims.d_sae; ++i) {
    for (std::size_t l = 0; l < dims.layers; ++l) {
      double s = 0.0;
      for (const double v : decoder_fiber(m.decoder, i, l)) s += v * v;
      out.norms(i, l) = std::sqrt(s);
    }
    out.cn[i] = coherence_ratio(out.norms.row(i));
  }
  return out;
}

Sensitivity layer_sensitivity(const CrosscoderModel& m, const ActivationBatch& data,
                              const SparsifyMode& mode, double eps) {
  const WeightDims dims = m.dims();
  if (data.empty()) throw DataError("sensitivity needs a nonempty evaluation set");
  Sensitivity out{Matrix<double>(dims.d_sae, dims.layers),
                  std::vector<std::size_t>(dims.d_sae, 0)};
  const std::size_t block = block_size(mode);
  std::vector<double> base(dims.d_sae);
  for (std::size_t begin = 0; begin < data.tokens(); begin += block) {
    const ActivationBatch slice = data.slice(begin, begin + block);
    const SparseCode clean = encode(m, slice, mode);
    for (std::size_t t = 0; t < clean.tokens(); ++t) {
      for (const auto i : clean.indices(t)) ++out.active_counts[i];
    }
    for (std::size_t l = 0; l < dims.layers; ++l) {
      const SparseCode masked = encode(m, slice.with_layer_zeroed(l), mode);
      for (std::size_t t = 0; t < clean.tokens(); ++t) {
        const auto idx = clean.indices(t);
        const auto val = clean.values(t);
        for (std::size_t n = 0; n < idx.size(); ++n) {
          const double z = val[n];
          const double zm = masked.value(t, idx[n]);
          out.s(idx[n], l) += std::abs(z - zm) / (z + eps);
        }
      }
    }
  }
  for (std::size_t i = 0; i < dims.d_sae; ++i) {
    if (out.active_counts[i] == 0) continue;
    for (std::size_t l = 0; l < dims.layers; ++l) {
      out.s(i, l) /= static_cast<double>(out.active_counts[i]);
    }
  }
  return out;
}

std::vector<double> functional_coherence(const Matrix<double>& s) {
  std::vector<double> cf(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) cf[i] = coherence_ratio(s.row(i));
  return cf;
}

CoherenceReport coherence_report(const CrosscoderModel& m, const ActivationBatch& data,
                                 const SparsifyMode& mode) {
  CoherenceReport r;
  r.norm = norm_coherence(m);
  r.sensitivity = layer_sensitivity(m, data, mode);
  r.cf = functional_coherence(r.sensitivity.s);
  for (std::size_t i = 0; i < r.cf.size(); ++i) {
    if (r.sensitivity.active_counts[i] == 0) r.cf[i] = kNaN;
  }
  return r;
}

double defined_mean(std::span<const double> values) {
  double s = 0.0;
  std::size_t n = 0;
  for (const double v : values) {
    if (std::isnan(v)) continue;
    s += v;
    ++n;
  }
  return n == 0 ? kNaN : s / static_cast<double>(n);
}

std::size_t defined_count(std::span<const double> values) {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](double v) { return !std::isnan(v); }));
}

Histogram coherence_histogram(std::span<const double> values, std::size_t layers, double width) {
  if (layers == 0 || !(width > 0.0)) throw ConfigError("histogram needs L >= 1 and width > 0");
  Histogram h;
  h.lo = 1.0;
  h.width = width;
  const double span = static_cast<double>(layers) - 1.0;
  const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / width - 1e-9)));
  h.counts.assign(bins, 0);
  for (const double v : values) {
    if (std::isnan(v)) continue;
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - h.lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

ReconAccumulator::ReconAccumulator(std::size_t layers, std::size_t dim, std::vector<double> means)
    : layers_(layers), dim_(dim), means_(std::move(means)), layer_err_(layers, 0.0) {
  if (means_.size() != layers * dim) throw DimensionError("means must be L x d");
}

void ReconAccumulator::add(const ActivationBatch& x, std::span<const double> recon) {
  if (x.layers() != layers_ || x.dim() != dim_ || recon.size() != x.flat().size()) {
    throw DimensionError("reconstruction does not match the batch");
  }
  for (std::size_t t = 0; t < x.tokens(); ++t) {
    for (std::size_t l = 0; l < layers_; ++l) {
      const auto xv = x.at(t, l);
      const double* r = recon.data() + (t * layers_ + l) * dim_;
      const double* mu = means_.data() + l * dim_;
      double err = 0.0, var = 0.0, dot = 0.0, nx = 0.0, nr = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double a = xv[j];
        const double e = a - r[j];
        const double c = a - mu[j];
        err += e * e;
        var += c * c;
        dot += a * r[j];
        nx += a * a;
        nr += r[j] * r[j];
      }
      err_ += err;
      var_ += var;
      layer_err_[l] += err;
      if (nx > 0.0 && nr > 0.0) {
        cos_ += dot / (std::sqrt(nx) * std::sqrt(nr));
      } else if (nx == 0.0 && nr == 0.0) {
        cos_ += 1.0;
      }
    }
  }
  tokens_ += x.tokens();
}

ReconMetrics ReconAccumulator::finish() const {
  ReconMetrics m;
  m.tokens = tokens_;
  if (tokens_ == 0) throw DataError("reconstruction metrics need a nonempty evaluation set");
  const double cells = static_cast<double>(tokens_ * layers_);
  m.mse_summed = err_ / cells;
  m.mse = m.mse_summed / static_cast<double>(dim_);
  m.ev_defined = var_ > 0.0;
  m.ev = m.ev_defined ? 1.0 - err_ / var_ : kNaN;
  m.cs = cos_ / cells;
  m.layer_mse.resize(layers_);
  for (std::size_t l = 0; l < layers_; ++l) {
    m.layer_mse[l] = layer_err_[l] / (static_cast<double>(tokens_) * static_cast<double>(dim_));
  }
  return m;
}

ReconMetrics recon_metrics(const CrosscoderModel& m, const ActivationBatch& data,
                           const SparsifyMode& mode) {
  if (data.empty()) throw DataError("reconstruction metrics need a nonempty evaluation set");
  const WeightDims dims = m.dims();
  if (data.layers() != dims.layers || data.dim() != dims.d) {
    throw DimensionError("evaluation data does not match the model");
  }
  ReconAccumulator acc(dims.layers, dims.d, layer_means(data));
  const std::size_t block = block_size(mode);
  for (std::size_t begin = 0; begin < data.tokens(); begin += block) {
    const ActivationBatch slice = data.slice(begin, begin + block);
    const ForwardResult fr = forward(m, slice, mode);
    acc.add(slice, fr.recon);
  }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Reports.

namespace {

struct Num {
  double v;
};

std::ostream& operator<<(std::ostream& out, Num n) {
  if (std::isnan(n.v)) return out << "nan";
  return out << std::setprecision(10) << n.v;
}

}  // namespace

void write_coherence_csv(std::ostream& out, const CoherenceReport& report) {
  out << "latent,cn,cf,active_count\n";
  for (std::size_t i = 0; i < report.latents(); ++i) {
    out << i << ',' << Num{report.norm.cn[i]} << ',' << Num{report.cf[i]} << ','
        << report.sensitivity.active_counts[i] << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const Histogram& cn, const Histogram& cf) {
  if (cn.counts.size() != cf.counts.size()) throw DimensionError("histograms differ in binning");
  out << "bin_lo,bin_hi,cn_count,cf_count\n";
  for (std::size_t b = 0; b < cn.counts.size(); ++b) {
    out << Num{cn.lo + cn.width * static_cast<double>(b)} << ','
        << Num{cn.lo + cn.width * static_cast<double>(b + 1)} << ',' << cn.counts[b] << ','
        << cf.counts[b] << '\n';
  }
}

void write_recon_csv(std::ostream& out, const ReconMetrics& m) {
  out << "scope,mse,mse_summed,ev,cs,mse_contribution\n";
  out << "pooled," << Num{m.mse} << ',' << Num{m.mse_summed} << ',' << Num{m.ev} << ','
      << Num{m.cs} << ',' << Num{m.mse} << '\n';
  const double layers = static_cast<double>(m.layer_mse.size());
  const double dim = m.layer_mse.empty() || m.mse == 0.0 ? 0.0 : m.mse_summed / m.mse;
  for (std::size_t l = 0; l < m.layer_mse.size(); ++l) {
    out << "layer_" << l << ',' << Num{m.layer_mse[l]} << ',' << Num{m.layer_mse[l] * dim}
        << ",,," << Num{m.layer_mse[l] / layers} << '\n';
  }
}

}  // namespace fmx
