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

#include "fmx/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "binary_io.hpp"
#include "fmx/errors.hpp"

namespace fmx {

namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& e : v) {
      e = standard_normal(rng);
      norm += e * e;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& e : v) e /= norm;
  return v;
}

void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * b[j];
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= dot * b[j];
    }
  }
}

double normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double e : v) norm += e * e;
  norm = std::sqrt(norm);
  if (norm > 1e-6) {
    for (auto& e : v) e /= norm;
  }
  return norm;
}

// Unit vector orthogonal to span(vectors). The vectors need not be
// orthonormal to each other (they may come from several layers), so an
// orthonormal basis of their span is built first.
std::vector<double> orthogonal_unit(const std::vector<const std::vector<double>*>& vectors,
                                    std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> basis;
  for (const auto* p : vectors) {
    auto b = *p;
    project_out(b, basis);
    if (normalize(b) > 1e-6) basis.push_back(std::move(b));
  }
  if (basis.size() >= d) throw ConfigError("synth: too many features for orthogonal directions");
  for (;;) {
    std::vector<double> v = random_unit(d, rng);
    project_out(v, basis);
    if (normalize(v) > 1e-6) return v;
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (d == 0 || layers == 0) throw ConfigError("synth: d and L must be positive");
  if (features.empty()) throw ConfigError("synth: no features");
  if (!(noise_sigma >= 0.0) || !(magnitude_sigma >= 0.0) || !std::isfinite(magnitude_mu)) {
    throw ConfigError("synth: bad magnitude/noise parameters");
  }
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto& feat = features[f];
    const std::string tag = "synth: feature " + std::to_string(f);
    if (feat.support.empty()) throw ConfigError(tag + " has an empty support");
    if (feat.directions.size() != feat.support.size()) {
      throw ConfigError(tag + " needs one direction per support layer");
    }
    if (!(feat.firing_prob > 0.0 && feat.firing_prob < 1.0)) {
      throw ConfigError(tag + " firing probability outside (0, 1)");
    }
    for (std::size_t n = 0; n < feat.support.size(); ++n) {
      if (feat.support[n] >= layers || (n > 0 && feat.support[n] <= feat.support[n - 1])) {
        throw ConfigError(tag + " support must be sorted, unique and < L");
      }
      if (feat.directions[n].size() != d) throw ConfigError(tag + " direction has wrong length");
      double norm = 0.0;
      for (double e : feat.directions[n]) norm += e * e;
      if (std::abs(norm - 1.0) > 1e-9) throw ConfigError(tag + " direction is not unit norm");
    }
  }
  if (concept_feature && *concept_feature >= features.size()) {
    throw ConfigError("synth: concept feature index out of range");
  }
}

SynthSpec build_spec(const SynthConfig& cfg, Rng& rng) {
  if (cfg.cross_layer_features > 0 && (cfg.cross_support == 0 || cfg.cross_support > cfg.layers)) {
    throw ConfigError("synth.cross_support must lie in [1, L]");
  }
  SynthSpec spec;
  spec.d = cfg.d;
  spec.layers = cfg.layers;
  spec.magnitude_mu = cfg.magnitude_mu;
  spec.magnitude_sigma = cfg.magnitude_sigma;
  spec.noise_sigma = cfg.noise_sigma;
  spec.concept_feature = cfg.concept_feature;

  for (std::size_t f = 0; f < cfg.single_layer_features; ++f) {
    PlantedFeature feat;
    feat.support = {f % cfg.layers};
    feat.firing_prob = cfg.firing_prob;
    spec.features.push_back(std::move(feat));
  }
  for (std::size_t f = 0; f < cfg.cross_layer_features; ++f) {
    PlantedFeature feat;
    const std::size_t starts = cfg.layers - cfg.cross_support + 1;
    const auto start = std::min(starts - 1, static_cast<std::size_t>(uniform01(rng) * double(starts)));
    for (std::size_t l = start; l < start + cfg.cross_support; ++l) feat.support.push_back(l);
    feat.firing_prob = cfg.firing_prob;
    spec.features.push_back(std::move(feat));
  }

  // Directions. Under the orthogonal option each layer's directions form an
  // orthonormal set; shared features orthogonalize against every layer they
  // touch.
  std::vector<std::vector<const std::vector<double>*>> per_layer(cfg.layers);
  for (auto& feat : spec.features) {
    const bool shared = cfg.policy == DirectionPolicy::kShared;
    if (shared) {
      std::vector<const std::vector<double>*> basis;
      if (cfg.orthogonal) {
        // A shared direction appears once per layer it touches; dedupe.
        for (auto l : feat.support) basis.insert(basis.end(), per_layer[l].begin(), per_layer[l].end());
        std::sort(basis.begin(), basis.end());
        basis.erase(std::unique(basis.begin(), basis.end()), basis.end());
      }
      const auto dir = cfg.orthogonal ? orthogonal_unit(basis, cfg.d, rng) : random_unit(cfg.d, rng);
      feat.directions.assign(feat.support.size(), dir);
    } else {
      for (auto l : feat.support) {
        feat.directions.push_back(cfg.orthogonal ? orthogonal_unit(per_layer[l], cfg.d, rng)
                                                 : random_unit(cfg.d, rng));
      }
    }
    if (cfg.orthogonal) {
      for (std::size_t n = 0; n < feat.support.size(); ++n) {
        // Shared copies all register the first so the dedupe above sees one.
        per_layer[feat.support[n]].push_back(&feat.directions[shared ? 0 : n]);
      }
    }
  }
  spec.validate();
  return spec;
}

SynthSample generate(const SynthSpec& spec, std::size_t tokens, Rng& rng,
                     std::size_t sequence_length) {
  spec.validate();
  const std::size_t d = spec.d;
  const std::size_t layers = spec.layers;
  const std::size_t nf = spec.features.size();
  SynthSample out{ActivationBatch(tokens, layers, d), Matrix<double>(tokens, nf)};
  std::vector<double> row(layers * d);
  std::vector<std::uint8_t> labels;
  if (spec.concept_feature) labels.resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& feat = spec.features[f];
      if (uniform01(rng) >= feat.firing_prob) continue;
      const double mag = std::exp(spec.magnitude_mu + spec.magnitude_sigma * standard_normal(rng));
      out.firing(t, f) = mag;
      for (std::size_t n = 0; n < feat.support.size(); ++n) {
        double* x = row.data() + feat.support[n] * d;
        const auto& dir = feat.directions[n];
        for (std::size_t j = 0; j < d; ++j) x[j] += mag * dir[j];
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (auto& v : row) v += spec.noise_sigma * standard_normal(rng);
    }
    auto dst = out.batch.flat().subspan(t * layers * d, layers * d);
    for (std::size_t n = 0; n < row.size(); ++n) dst[n] = static_cast<float>(row[n]);
    if (spec.concept_feature) labels[t] = out.firing(t, *spec.concept_feature) > 0.0 ? 1 : 0;
  }
  if (spec.concept_feature) out.batch.set_labels(std::move(labels));
  if (sequence_length > 0) {
    std::vector<std::uint32_t> ids(tokens);
    for (std::size_t t = 0; t < tokens; ++t) ids[t] = static_cast<std::uint32_t>(t / sequence_length);
    out.batch.set_sequence_ids(std::move(ids));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache.

namespace {

constexpr std::string_view kCacheMagic = "FMXA1";
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagSequenceIds = 1u << 1;

}  // namespace

std::vector<char> serialize_cache(const ActivationBatch& batch) {
  if (batch.tokens() > 0xffffffffu || batch.layers() > 0xffffffffu || batch.dim() > 0xffffffffu) {
    throw DimensionError("cache dims do not fit in u32");
  }
  std::uint32_t flags = 0;
  if (batch.labels()) flags |= kFlagLabels;
  if (batch.sequence_ids()) flags |= kFlagSequenceIds;
  detail::ByteWriter w;
  w.bytes(kCacheMagic);
  w.put<std::uint32_t>(kCacheVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.tokens()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.layers()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(batch.dim()));
  w.put<std::uint32_t>(flags);
  w.put_array(batch.flat().data(), batch.flat().size());
  if (batch.labels()) w.put_array(batch.labels()->data(), batch.labels()->size());
  if (batch.sequence_ids()) w.put_array(batch.sequence_ids()->data(), batch.sequence_ids()->size());
  return w.buffer();
}

ActivationBatch deserialize_cache(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.expect_magic(kCacheMagic);
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCacheVersion) {
    throw FormatError("unsupported cache version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = r.offset();
  const std::uint64_t tokens = r.get<std::uint32_t>("T");
  const std::uint64_t layers = r.get<std::uint32_t>("L");
  const std::uint64_t dim = r.get<std::uint32_t>("d");
  const std::size_t flags_at = r.offset();
  const auto flags = r.get<std::uint32_t>("flags");
  if (flags & ~(kFlagLabels | kFlagSequenceIds)) {
    throw FormatError("unknown flag bits", flags_at);
  }
  if ((layers == 0 || dim == 0) && tokens > 0) throw FormatError("zero L or d", dims_at);
  const unsigned __int128 floats = static_cast<unsigned __int128>(tokens) * layers * dim;
  unsigned __int128 expected = floats * 4;
  if (flags & kFlagLabels) expected += tokens;
  if (flags & kFlagSequenceIds) expected += tokens * 4;
  if (expected != r.remaining()) {
    throw FormatError("payload holds " + std::to_string(r.remaining()) +
                          " bytes but header implies " +
                          std::to_string(static_cast<unsigned long long>(expected)),
                      r.offset());
  }
  std::vector<float> data(static_cast<std::size_t>(floats));
  r.get_array(data.data(), data.size(), "activations");
  ActivationBatch batch(tokens, layers, dim, std::move(data));
  if (flags & kFlagLabels) {
    const std::size_t at = r.offset();
    std::vector<std::uint8_t> labels(tokens);
    r.get_array(labels.data(), labels.size(), "labels");
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (labels[t] > 1) throw FormatError("label byte is not 0 or 1", at + t);
    }
    batch.set_labels(std::move(labels));
  }
  if (flags & kFlagSequenceIds) {
    std::vector<std::uint32_t> ids(tokens);
    r.get_array(ids.data(), ids.size(), "sequence ids");
    batch.set_sequence_ids(std::move(ids));
  }
  r.expect_end();
  return batch;
}

void write_cache(const ActivationBatch& batch, const std::filesystem::path& path) {
  detail::ByteWriter w;
  const auto bytes = serialize_cache(batch);
  w.put_array(bytes.data(), bytes.size());
  w.save(path);
}

ActivationBatch read_cache(const std::filesystem::path& path) {
  return deserialize_cache(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Recovery.

RecoveryReport recovery_score(const CrosscoderModel& m, const Matrix<double>& firing,
                              const ActivationBatch& batch, const SparsifyMode& mode,
                              std::span<const double> latent_cf) {
  const std::size_t tokens = batch.tokens();
  const std::size_t nf = firing.cols();
  const std::size_t width = m.dims().d_sae;
  if (firing.rows() != tokens) throw DimensionError("firing record does not match the batch");
  if (!latent_cf.empty() && latent_cf.size() != width) {
    throw DimensionError("latent_cf must have d_sae entries");
  }
  if (tokens < 2) throw DataError("recovery needs at least two tokens");

  // Encode in slices to bound memory.
  constexpr std::size_t kSlice = 4096;
  std::vector<double> sum_z(width, 0.0), sum_zz(width, 0.0);
  std::vector<double> sum_f(nf, 0.0), sum_ff(nf, 0.0);
  Matrix<double> sum_zf(nf, width);
  for (std::size_t begin = 0; begin < tokens; begin += kSlice) {
    const std::size_t end = std::min(tokens, begin + kSlice);
    const SparseCode code = encode(m, batch.slice(begin, end), mode);
    for (std::size_t t = begin; t < end; ++t) {
      const auto idx = code.indices(t - begin);
      const auto val = code.values(t - begin);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        sum_z[idx[n]] += val[n];
        sum_zz[idx[n]] += val[n] * val[n];
      }
      for (std::size_t f = 0; f < nf; ++f) {
        const double fv = firing(t, f);
        if (fv == 0.0) continue;
        sum_f[f] += fv;
        sum_ff[f] += fv * fv;
        auto row = sum_zf.row(f);
        for (std::size_t n = 0; n < idx.size(); ++n) row[idx[n]] += fv * val[n];
      }
    }
  }
  const double nt = static_cast<double>(tokens);
  struct Pair {
    double corr;
    std::size_t feature;
    std::size_t latent;
  };
  std::vector<Pair> pairs;
  pairs.reserve(nf * width);
  for (std::size_t f = 0; f < nf; ++f) {
    const double var_f = sum_ff[f] / nt - (sum_f[f] / nt) * (sum_f[f] / nt);
    for (std::size_t i = 0; i < width; ++i) {
      const double var_z = sum_zz[i] / nt - (sum_z[i] / nt) * (sum_z[i] / nt);
      double corr = 0.0;
      if (var_f > 0.0 && var_z > 0.0) {
        const double cov = sum_zf(f, i) / nt - (sum_f[f] / nt) * (sum_z[i] / nt);
        corr = std::min(1.0, std::abs(cov) / std::sqrt(var_f * var_z));
      }
      pairs.push_back({corr, f, i});
    }
  }
  // Descending correlation; ties by feature then latent index, so relabeling
  // latents cannot change the reported correlations.
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.corr != b.corr) return a.corr > b.corr;
    if (a.feature != b.feature) return a.feature < b.feature;
    return a.latent < b.latent;
  });
  RecoveryReport report;
  report.matches.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    report.matches[f].feature = f;
    report.matches[f].latent_cf = std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<bool> feature_done(nf, false), latent_used(width, false);
  std::size_t assigned = 0;
  for (const auto& p : pairs) {
    if (assigned == std::min(nf, width)) break;
    if (feature_done[p.feature] || latent_used[p.latent]) continue;
    feature_done[p.feature] = true;
    latent_used[p.latent] = true;
    ++assigned;
    auto& match = report.matches[p.feature];
    match.latent = p.latent;
    match.correlation = p.corr;
    if (!latent_cf.empty()) match.latent_cf = latent_cf[p.latent];
  }
  double total = 0.0;
  for (const auto& match : report.matches) total += match.correlation;
  report.mean_correlation = total / static_cast<double>(nf);
  return report;
}

CrosscoderModel embed_planted_dictionary(const SynthSpec& spec, std::size_t k, std::size_t d_sae) {
  spec.validate();
  const std::size_t nf = spec.features.size();
  if (d_sae == 0) d_sae = nf;
  if (d_sae < nf) throw ConfigError("d_sae smaller than the planted feature count");
  CrosscoderModel m = make_model({spec.d, d_sae, spec.layers}, Variant::kDense, {}, k);
  auto& enc = std::get<DenseWeights3<double>>(m.encoder);
  auto& dec = std::get<DenseWeights3<double>>(m.decoder);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& feat = spec.features[f];
    const double share = 1.0 / static_cast<double>(feat.support.size());
    for (std::size_t n = 0; n < feat.support.size(); ++n) {
      for (std::size_t j = 0; j < spec.d; ++j) {
        enc.at(j, f, feat.support[n]) = share * feat.directions[n][j];
        dec.at(j, f, feat.support[n]) = feat.directions[n][j];
      }
    }
  }
  return m;
}

}  // namespace fmx
