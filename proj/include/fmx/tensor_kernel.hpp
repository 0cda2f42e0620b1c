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

// Three-way crosscoder weights (dense, tensor-ring, CP) and the
// contractions that apply them to activation batches.
//
// Every weight tensor has the logical shape (d, d_sae, L): element
// (j, i, l) couples activation coordinate j at layer l with latent i, and the
// mode-1 fiber W[:, i, l] is latent i's direction at layer l. Encoders and
// decoders share this orientation.
//
// Factorized paths never allocate a d x d_sae x L buffer. All reductions
// accumulate in double regardless of the storage scalar.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/sparse_code.hpp"
#include "fmx/tensor.hpp"

namespace fmx {

struct WeightDims {
  std::size_t d = 0;
  std::size_t d_sae = 0;
  std::size_t layers = 0;

  friend bool operator==(const WeightDims&, const WeightDims&) = default;
};

std::string to_string(const WeightDims& dims);

// Unfactorized tensor. Storage is layer-major: (j, i, l) sits at
// entries[(l * d + j) * d_sae + i], so each (l, j) row over latents is
// contiguous and the encoder contraction is a plain matrix product.
template <typename Scalar>
struct DenseWeights3 {
  WeightDims dims;
  std::vector<Scalar> entries;

  DenseWeights3() = default;
  explicit DenseWeights3(WeightDims dims_in)
      : dims(dims_in), entries(dims_in.d * dims_in.d_sae * dims_in.layers, Scalar{0}) {}

  std::size_t offset(std::size_t j, std::size_t i, std::size_t l) const {
    return (l * dims.d + j) * dims.d_sae + i;
  }
  Scalar& at(std::size_t j, std::size_t i, std::size_t l) { return entries[offset(j, i, l)]; }
  Scalar at(std::size_t j, std::size_t i, std::size_t l) const {
    return entries[offset(j, i, l)];
  }

  friend bool operator==(const DenseWeights3&, const DenseWeights3&) = default;
};

// Tensor ring: W[j, i, l] = Tr(g1[:, j, :] g2[:, i, :] g3[:, l, :]) with
// g1: R1 x d x R2, g2: R2 x d_sae x R3, g3: R3 x L x R1.
template <typename Scalar>
struct TrFactors {
  Tensor3<Scalar> g1;
  Tensor3<Scalar> g2;
  Tensor3<Scalar> g3;

  TrFactors() = default;
  TrFactors(WeightDims dims, std::array<std::size_t, 3> ranks)
      : g1({ranks[0], dims.d, ranks[1]}),
        g2({ranks[1], dims.d_sae, ranks[2]}),
        g3({ranks[2], dims.layers, ranks[0]}) {}

  std::array<std::size_t, 3> ranks() const { return {g1.dim(0), g2.dim(0), g3.dim(0)}; }
  WeightDims dims() const { return {g1.dim(1), g2.dim(1), g3.dim(1)}; }

  friend bool operator==(const TrFactors&, const TrFactors&) = default;
};

// CP: W[j, i, l] = sum_r w(j, r) u(i, r) v(l, r).
template <typename Scalar>
struct CpFactors {
  Matrix<Scalar> w;  // d x R
  Matrix<Scalar> u;  // d_sae x R
  Matrix<Scalar> v;  // L x R

  CpFactors() = default;
  CpFactors(WeightDims dims, std::size_t rank)
      : w(dims.d, rank), u(dims.d_sae, rank), v(dims.layers, rank) {}

  std::size_t rank() const { return w.cols(); }
  WeightDims dims() const { return {w.rows(), u.rows(), v.rows()}; }

  friend bool operator==(const CpFactors&, const CpFactors&) = default;
};

template <typename Scalar>
using Weights = std::variant<DenseWeights3<Scalar>, TrFactors<Scalar>, CpFactors<Scalar>>;

template <typename Scalar>
WeightDims dims_of(const Weights<Scalar>& w);

// Structural validity: factor shapes agree with each other, every rank >= 1
// and every entry finite. Throws DimensionError / DataError.
template <typename Scalar>
void validate(const Weights<Scalar>& w);

// Flat views of each parameter array in declaration order
// (dense: entries; TR: g1, g2, g3; CP: w, u, v).
template <typename Scalar>
std::vector<std::span<Scalar>> parameter_arrays(Weights<Scalar>& w);
template <typename Scalar>
std::vector<std::span<const Scalar>> parameter_arrays(const Weights<Scalar>& w);

template <typename Scalar>
std::size_t parameter_count(const Weights<Scalar>& w);

// Zero-valued weights of the same variant and shape (gradient buffers).
template <typename Scalar>
Weights<Scalar> zeros_like(const Weights<Scalar>& w);

// Elementwise evaluation. Throws IndexError when out of bounds.
template <typename Scalar>
Scalar tr_element(const TrFactors<Scalar>& f, std::size_t j, std::size_t i, std::size_t l);
template <typename Scalar>
Scalar cp_element(const CpFactors<Scalar>& f, std::size_t j, std::size_t i, std::size_t l);

// Full tensor. Throws DimensionError when `target` disagrees with the factors.
template <typename Scalar>
DenseWeights3<Scalar> materialize(const TrFactors<Scalar>& f, WeightDims target);
template <typename Scalar>
DenseWeights3<Scalar> materialize(const CpFactors<Scalar>& f, WeightDims target);
template <typename Scalar>
DenseWeights3<Scalar> materialize(const Weights<Scalar>& w);

// sum_l E_l^T x_l per token: a T x d_sae matrix, no bias.
template <typename Scalar>
Matrix<double> encoder_contract(const Weights<Scalar>& enc, const ActivationBatch& batch);

// D_l z for one token's code entries (indices must be < d_sae).
template <typename Scalar>
std::vector<double> decoder_apply(const Weights<Scalar>& dec,
                                  std::span<const std::uint32_t> indices,
                                  std::span<const double> values, std::size_t l);

// D_l z_t for every token and layer: T x L x d, token-major like
// ActivationBatch. No bias.
template <typename Scalar>
std::vector<double> decoder_apply_batch(const Weights<Scalar>& dec, const SparseCode& code);

// Mode-1 fiber W[:, i, l], computed on demand.
template <typename Scalar>
std::vector<Scalar> decoder_fiber(const Weights<Scalar>& dec, std::size_t i, std::size_t l);

// Reverse-mode contractions (double only; training runs in double).
//
// encoder_backward: given d(loss)/d(preact) as sparse rows, accumulate
// d(loss)/d(encoder parameters) into `grad`.
void encoder_backward(const Weights<double>& enc, const ActivationBatch& batch,
                      const SparseCode& dpre, Weights<double>& grad);

// decoder_backward: given d(loss)/d(recon) (T x L x d), accumulate the
// decoder parameter gradient into `grad` and return d(loss)/dz aligned with
// `code`'s entries.
std::vector<double> decoder_backward(const Weights<double>& dec, const SparseCode& code,
                                     std::span<const double> drecon, Weights<double>& grad);

}  // namespace fmx
