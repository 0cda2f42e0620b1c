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

#include "fmx/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "fmx/errors.hpp"

namespace fmx {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDense:
      return "crosscoder";
    case Variant::kTr:
      return "tr";
    case Variant::kCp:
      return "cp";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "crosscoder" || name == "dense") return Variant::kDense;
  if (name == "tr") return Variant::kTr;
  if (name == "cp") return Variant::kCp;
  throw ConfigError("unknown variant '" + name + "' (expected crosscoder, tr or cp)");
}

void CrosscoderModel::validate() const {
  if (encoder.index() != decoder.index()) {
    throw DimensionError("encoder and decoder use different factorizations");
  }
  const WeightDims d = dims();
  if (dims_of(decoder) != d) {
    throw DimensionError("decoder dims " + to_string(dims_of(decoder)) + " != encoder dims " +
                         to_string(d));
  }
  fmx::validate(encoder);
  fmx::validate(decoder);
  if (b_enc.size() != d.d_sae) throw DimensionError("b_enc must have d_sae entries");
  if (b_dec.rows() != d.layers || b_dec.cols() != d.d) {
    throw DimensionError("b_dec must be L x d");
  }
  if (k < 1 || k > d.d_sae) {
    throw ConfigError("k = " + std::to_string(k) + " outside [1, d_sae]");
  }
  if (!(mask_p >= 0.0 && mask_p <= 1.0)) throw ConfigError("mask_p outside [0, 1]");
  for (double v : b_enc) {
    if (!std::isfinite(v)) throw DataError("non-finite b_enc");
  }
  for (double v : b_dec.flat()) {
    if (!std::isfinite(v)) throw DataError("non-finite b_dec");
  }
}

CrosscoderModel make_model(WeightDims dims, Variant variant, std::array<std::size_t, 3> ranks,
                           std::size_t k, double mask_p) {
  if (dims.d == 0 || dims.d_sae == 0 || dims.layers == 0) {
    throw ConfigError("model dims must be positive, got " + to_string(dims));
  }
  CrosscoderModel m;
  switch (variant) {
    case Variant::kDense:
      m.encoder = DenseWeights3<double>(dims);
      break;
    case Variant::kTr:
      if (ranks[0] == 0 || ranks[1] == 0 || ranks[2] == 0) {
        throw ConfigError("TR ranks must be >= 1");
      }
      m.encoder = TrFactors<double>(dims, ranks);
      break;
    case Variant::kCp:
      if (ranks[0] == 0) throw ConfigError("CP rank must be >= 1");
      m.encoder = CpFactors<double>(dims, ranks[0]);
      break;
  }
  m.decoder = m.encoder;
  m.b_enc.assign(dims.d_sae, 0.0);
  m.b_dec = Matrix<double>(dims.layers, dims.d);
  m.k = k;
  m.mask_p = mask_p;
  m.validate();
  return m;
}

std::vector<std::span<double>> parameter_spans(CrosscoderModel& m) {
  auto out = parameter_arrays(m.encoder);
  for (auto arr : parameter_arrays(m.decoder)) out.push_back(arr);
  out.emplace_back(m.b_enc);
  out.push_back(m.b_dec.flat());
  return out;
}

std::vector<std::span<const double>> parameter_spans(const CrosscoderModel& m) {
  auto out = parameter_arrays(m.encoder);
  for (auto arr : parameter_arrays(m.decoder)) out.push_back(arr);
  out.emplace_back(m.b_enc);
  out.push_back(m.b_dec.flat());
  return out;
}

CrosscoderModel zeros_like(const CrosscoderModel& m) {
  CrosscoderModel out;
  out.encoder = fmx::zeros_like(m.encoder);
  out.decoder = fmx::zeros_like(m.decoder);
  out.b_enc.assign(m.b_enc.size(), 0.0);
  out.b_dec = Matrix<double>(m.b_dec.rows(), m.b_dec.cols());
  out.k = m.k;
  out.mask_p = m.mask_p;
  return out;
}

std::size_t weight_count(const CrosscoderModel& m) {
  return parameter_count(m.encoder) + parameter_count(m.decoder);
}

std::size_t param_count(const CrosscoderModel& m) {
  return weight_count(m) + m.b_enc.size() + m.b_dec.size();
}

Matrix<double> preactivations(const CrosscoderModel& m, const ActivationBatch& batch) {
  Matrix<double> pre = encoder_contract(m.encoder, batch);
  for (std::size_t t = 0; t < pre.rows(); ++t) {
    auto row = pre.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::max(0.0, row[i] + m.b_enc[i]);
  }
  return pre;
}

namespace {

struct Candidate {
  double value;
  std::uint32_t token;
  std::uint32_t latent;
};

// Descending value, then ascending (token, latent).
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.value != b.value) return a.value > b.value;
  if (a.token != b.token) return a.token < b.token;
  return a.latent < b.latent;
}

SparseCode from_candidates(std::vector<Candidate>& kept, std::size_t tokens, std::size_t width) {
  std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    return a.token != b.token ? a.token < b.token : a.latent < b.latent;
  });
  SparseCode code(0, width);
  std::size_t n = 0;
  std::vector<SparseCode::Entry> entries;
  for (std::size_t t = 0; t < tokens; ++t) {
    entries.clear();
    while (n < kept.size() && kept[n].token == t) {
      entries.push_back({kept[n].latent, kept[n].value});
      ++n;
    }
    code.push_token(entries);
  }
  return code;
}

void append_batch_topk(const Matrix<double>& pre, std::size_t begin, std::size_t end,
                       std::size_t k, std::vector<Candidate>& out) {
  std::vector<Candidate> cands;
  for (std::size_t t = begin; t < end; ++t) {
    const auto row = pre.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] > 0.0) {
        cands.push_back({row[i], static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
      }
    }
  }
  const std::size_t budget = (end - begin) * k;
  if (cands.size() > budget) {
    std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(budget),
                     cands.end(), ranks_before);
    cands.resize(budget);
  }
  out.insert(out.end(), cands.begin(), cands.end());
}

}  // namespace

SparseCode batch_topk(const Matrix<double>& preacts, std::size_t k) {
  if (k < 1) throw ConfigError("batch_topk: k must be >= 1");
  std::vector<Candidate> kept;
  append_batch_topk(preacts, 0, preacts.rows(), k, kept);
  return from_candidates(kept, preacts.rows(), preacts.cols());
}

std::string to_string(const SparsifyMode& mode) {
  switch (mode.kind) {
    case SparsifyMode::Kind::kBatchTopK:
      return "batch_topk";
    case SparsifyMode::Kind::kPerTokenTopK:
      return "per_token_topk";
    case SparsifyMode::Kind::kThreshold: {
      std::string s = std::to_string(mode.theta);
      return "threshold:" + s;
    }
  }
  return "?";
}

SparsifyMode parse_sparsify_mode(const std::string& text) {
  if (text == "batch_topk") return SparsifyMode::batch();
  if (text == "per_token_topk") return SparsifyMode::per_token();
  const std::string prefix = "threshold:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    char* end = nullptr;
    const double theta = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size() || !std::isfinite(theta)) {
      throw ConfigError("bad threshold in sparsify mode '" + text + "'");
    }
    if (theta < 0.0) throw ConfigError("threshold must be >= 0, got " + num);
    return SparsifyMode::threshold(theta);
  }
  throw ConfigError("unknown sparsify mode '" + text +
                    "' (expected batch_topk, per_token_topk or threshold:<theta>)");
}

SparseCode sparsify_eval(const Matrix<double>& preacts, const SparsifyMode& mode, std::size_t k) {
  if (k < 1) throw ConfigError("sparsify: k must be >= 1");
  const std::size_t tokens = preacts.rows();
  const std::size_t width = preacts.cols();
  switch (mode.kind) {
    case SparsifyMode::Kind::kBatchTopK: {
      const std::size_t chunk = mode.chunk == 0 ? std::max<std::size_t>(tokens, 1) : mode.chunk;
      std::vector<Candidate> kept;
      for (std::size_t begin = 0; begin < tokens; begin += chunk) {
        append_batch_topk(preacts, begin, std::min(tokens, begin + chunk), k, kept);
      }
      return from_candidates(kept, tokens, width);
    }
    case SparsifyMode::Kind::kPerTokenTopK: {
      SparseCode code(0, width);
      std::vector<Candidate> cands;
      std::vector<SparseCode::Entry> entries;
      for (std::size_t t = 0; t < tokens; ++t) {
        cands.clear();
        const auto row = preacts.row(t);
        for (std::size_t i = 0; i < width; ++i) {
          if (row[i] > 0.0) {
            cands.push_back({row[i], static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
          }
        }
        if (cands.size() > k) {
          std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k),
                           cands.end(), ranks_before);
          cands.resize(k);
        }
        entries.clear();
        for (const auto& c : cands) entries.push_back({c.latent, c.value});
        code.push_token(entries);
      }
      return code;
    }
    case SparsifyMode::Kind::kThreshold: {
      if (!(mode.theta >= 0.0)) {
        throw ConfigError("threshold must be >= 0, got " + std::to_string(mode.theta));
      }
      SparseCode code(0, width);
      std::vector<SparseCode::Entry> entries;
      for (std::size_t t = 0; t < tokens; ++t) {
        entries.clear();
        const auto row = preacts.row(t);
        for (std::size_t i = 0; i < width; ++i) {
          if (row[i] > mode.theta && row[i] > 0.0) {
            entries.push_back({static_cast<std::uint32_t>(i), row[i]});
          }
        }
        code.push_token(entries);
      }
      return code;
    }
  }
  throw ConfigError("unknown sparsify mode");
}

SparseCode encode(const CrosscoderModel& m, const ActivationBatch& batch,
                  const SparsifyMode& mode) {
  return sparsify_eval(preactivations(m, batch), mode, m.k);
}

std::vector<double> decode(const CrosscoderModel& m, const SparseCode& code) {
  std::vector<double> recon = decoder_apply_batch(m.decoder, code);
  const std::size_t stride = m.b_dec.size();
  const auto bias = m.b_dec.flat();
  for (std::size_t t = 0; t < code.tokens(); ++t) {
    double* r = recon.data() + t * stride;
    for (std::size_t n = 0; n < stride; ++n) r[n] += bias[n];
  }
  return recon;
}

ForwardResult forward(const CrosscoderModel& m, const ActivationBatch& batch,
                      const SparsifyMode& mode) {
  ForwardResult out;
  out.code = encode(m, batch, mode);
  out.recon = decode(m, out.code);
  return out;
}

// ---------------------------------------------------------------------------
// Ranks.

std::size_t tr_tensor_count(std::size_t d, std::size_t d_sae, std::size_t layers,
                            const std::array<std::size_t, 3>& r) {
  return r[0] * d * r[1] + r[1] * d_sae * r[2] + r[2] * layers * r[0];
}

std::array<double, 3> tr_rank_solution(std::size_t d, std::size_t d_sae, std::size_t layers,
                                       std::size_t budget, RankRatio ratio) {
  if (d == 0 || d_sae == 0 || layers == 0) throw ConfigError("rank selection needs positive dims");
  const double rho2 = ratio == RankRatio::kFitted
                          ? std::sqrt(static_cast<double>(d_sae) / static_cast<double>(layers))
                          : std::sqrt(static_cast<double>(d) / static_cast<double>(layers));
  const double rho3 = std::sqrt(static_cast<double>(d_sae) / static_cast<double>(d));
  // count(x) = x^2 (d rho2 + d_sae rho2 rho3 + L rho3) for (x, rho2 x, rho3 x).
  const double per_unit = static_cast<double>(d) * rho2 +
                          static_cast<double>(d_sae) * rho2 * rho3 +
                          static_cast<double>(layers) * rho3;
  const double x = std::sqrt(0.5 * static_cast<double>(budget) / per_unit);
  return {x, rho2 * x, rho3 * x};
}

std::array<std::size_t, 3> nearest_tr_ranks(std::size_t d, std::size_t d_sae, std::size_t layers,
                                            std::size_t budget, RankRatio ratio) {
  const auto real = tr_rank_solution(d, d_sae, layers, budget, ratio);
  std::array<std::size_t, 3> out{};
  for (int n = 0; n < 3; ++n) {
    out[n] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(real[n])));
  }
  return out;
}

std::array<std::size_t, 3> select_tr_ranks(std::size_t d, std::size_t d_sae, std::size_t layers,
                                            std::size_t budget, RankRatio ratio) {
  const std::size_t half = budget / 2;
  if (tr_tensor_count(d, d_sae, layers, {1, 1, 1}) > half) {
    throw ConfigError("parameter budget " + std::to_string(budget) +
                      " is below the rank-one TR count");
  }
  const auto real = tr_rank_solution(d, d_sae, layers, budget, ratio);
  std::array<std::array<std::size_t, 2>, 3> options;
  for (int n = 0; n < 3; ++n) {
    const auto lo = static_cast<std::size_t>(std::floor(real[n]));
    options[n] = {std::max<std::size_t>(1, lo), std::max<std::size_t>(1, lo + 1)};
  }
  std::array<std::size_t, 3> best{1, 1, 1};
  std::size_t best_count = tr_tensor_count(d, d_sae, layers, best);
  for (std::size_t a : options[0]) {
    for (std::size_t b : options[1]) {
      for (std::size_t c : options[2]) {
        const std::array<std::size_t, 3> cand{a, b, c};
        const std::size_t count = tr_tensor_count(d, d_sae, layers, cand);
        if (count > half) continue;
        if (count > best_count || (count == best_count && cand < best)) {
          best = cand;
          best_count = count;
        }
      }
    }
  }
  return best;
}

std::size_t select_cp_rank(std::size_t d, std::size_t d_sae, std::size_t layers,
                           std::size_t budget) {
  const std::size_t per_rank = d + d_sae + layers;
  const std::size_t half = budget / 2;
  // Round half up in integers: floor((half + per_rank / 2) / per_rank).
  const std::size_t rank = (2 * half + per_rank) / (2 * per_rank);
  if (rank == 0) {
    throw ConfigError("parameter budget " + std::to_string(budget) +
                      " cannot fit a rank-one CP tensor (needs " + std::to_string(2 * per_rank) +
                      ")");
  }
  return rank;
}

std::size_t cp_sweep_rank(std::size_t full_rank, double reduction) {
  if (!(reduction > 0.0 && reduction <= 1.0)) {
    throw ConfigError("rank reduction must lie in (0, 1]");
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                      static_cast<double>(full_rank) * reduction + 1e-9)));
}

}  // namespace fmx
