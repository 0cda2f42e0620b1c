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

// Crosscoder model: the encoder/decoder pair, biases, sparsifier settings,
// the forward map and rank selection for parameter-matched variants.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/sparse_code.hpp"
#include "fmx/tensor.hpp"
#include "fmx/tensor_kernel.hpp"

namespace fmx {

enum class Variant { kDense, kTr, kCp };

std::string to_string(Variant v);
// Accepts "crosscoder"/"dense", "tr", "cp". Throws ConfigError otherwise.
Variant parse_variant(const std::string& name);

// Parameters are held in double; checkpoints store them as f32.
struct CrosscoderModel {
  Weights<double> encoder;
  Weights<double> decoder;
  std::vector<double> b_enc;  // d_sae, shared across layers
  Matrix<double> b_dec;       // L x d
  std::size_t k = 1;
  double mask_p = 0.0;

  WeightDims dims() const { return dims_of(encoder); }
  Variant variant() const { return static_cast<Variant>(encoder.index()); }

  // Shape and range checks across all fields. Throws DimensionError /
  // ConfigError / DataError.
  void validate() const;

  friend bool operator==(const CrosscoderModel&, const CrosscoderModel&) = default;
};

// Zero-valued model. `ranks` is (R1, R2, R3) for TR and (R, -, -) for CP;
// ignored for dense.
CrosscoderModel make_model(WeightDims dims, Variant variant, std::array<std::size_t, 3> ranks,
                           std::size_t k, double mask_p = 0.0);

// Every parameter array in checkpoint order: encoder arrays, decoder
// arrays, b_enc, b_dec.
std::vector<std::span<double>> parameter_spans(CrosscoderModel& m);
std::vector<std::span<const double>> parameter_spans(const CrosscoderModel& m);

// Zero-valued model of identical shape (gradient and optimizer buffers).
CrosscoderModel zeros_like(const CrosscoderModel& m);

// Weights plus biases.
std::size_t param_count(const CrosscoderModel& m);
std::size_t weight_count(const CrosscoderModel& m);

// ReLU(sum_l E_l^T x_l + b_enc), T x d_sae.
Matrix<double> preactivations(const CrosscoderModel& m, const ActivationBatch& batch);

// Keeps the T*k largest positive entries of the whole batch. Ties are broken
// by lower token index, then lower latent index.
SparseCode batch_topk(const Matrix<double>& preacts, std::size_t k);

struct SparsifyMode {
  enum class Kind { kBatchTopK, kPerTokenTopK, kThreshold };
  Kind kind = Kind::kBatchTopK;
  double theta = 0.0;
  // BatchTopK at evaluation selects within consecutive blocks of this many
  // tokens, so results do not depend on how large the evaluation set is.
  std::size_t chunk = 4096;

  static SparsifyMode batch(std::size_t chunk = 4096) { return {Kind::kBatchTopK, 0.0, chunk}; }
  static SparsifyMode per_token() { return {Kind::kPerTokenTopK, 0.0, 0}; }
  static SparsifyMode threshold(double theta) { return {Kind::kThreshold, theta, 0}; }
};

std::string to_string(const SparsifyMode& mode);
// "batch_topk", "per_token_topk", "threshold:<theta>". Throws ConfigError.
SparsifyMode parse_sparsify_mode(const std::string& text);

// Throws ConfigError for threshold < 0.
SparseCode sparsify_eval(const Matrix<double>& preacts, const SparsifyMode& mode, std::size_t k);

// Encode + sparsify, without decoding.
SparseCode encode(const CrosscoderModel& m, const ActivationBatch& batch, const SparsifyMode& mode);

struct ForwardResult {
  SparseCode code;
  std::vector<double> recon;  // T x L x d, token-major
};

// x_hat_l = D_l z + b_dec_l.
std::vector<double> decode(const CrosscoderModel& m, const SparseCode& code);
ForwardResult forward(const CrosscoderModel& m, const ActivationBatch& batch,
                      const SparsifyMode& mode);

// ---------------------------------------------------------------------------
// Rank selection. `budget` is the parameter count of the matching dense
// crosscoder's two weight tensors (2 d d_sae L); each factorized tensor gets
// budget / 2.

// Per-tensor TR weight count R1 d R2 + R2 d_sae R3 + R3 L R1.
std::size_t tr_tensor_count(std::size_t d, std::size_t d_sae, std::size_t layers,
                            const std::array<std::size_t, 3>& ranks);

enum class RankRatio {
  // R2 / R1 = sqrt(d_sae / L), R3 / R1 = sqrt(d_sae / d). Reproduces the
  // published tuples.
  kFitted,
  // R2 / R1 = sqrt(d / L) with the same R3 rule, as printed.
  kPrinted,
};

// Real-valued (R1, R2, R3) on the ratio line whose count equals budget / 2.
std::array<double, 3> tr_rank_solution(std::size_t d, std::size_t d_sae, std::size_t layers,
                                       std::size_t budget, RankRatio ratio = RankRatio::kFitted);

// Each rank rounded to nearest (at least 1). May overshoot budget / 2 slightly.
std::array<std::size_t, 3> nearest_tr_ranks(std::size_t d, std::size_t d_sae, std::size_t layers,
                                            std::size_t budget,
                                            RankRatio ratio = RankRatio::kFitted);

// Among the floor/ceil neighbours of the real solution, the tuple with the
// largest count not exceeding budget / 2 (ties: lexicographically smallest).
// Throws ConfigError when even (1, 1, 1) does not fit.
std::array<std::size_t, 3> select_tr_ranks(std::size_t d, std::size_t d_sae, std::size_t layers,
                                            std::size_t budget,
                                            RankRatio ratio = RankRatio::kFitted);

// round((budget / 2) / (d + d_sae + L)). Throws ConfigError when that is 0.
std::size_t select_cp_rank(std::size_t d, std::size_t d_sae, std::size_t layers,
                           std::size_t budget);

// Reduced CP rank for a sweep cell: floor(full_rank * reduction), at least 1.
std::size_t cp_sweep_rank(std::size_t full_rank, double reduction);

}  // namespace fmx
