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

#include "fmx/tensor_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "fmx/errors.hpp"

namespace fmx {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_index(std::size_t value, std::size_t bound, const char* name) {
  if (value >= bound) {
    throw IndexError(std::string(name) + " index " + std::to_string(value) +
                     " out of range [0, " + std::to_string(bound) + ")");
  }
}

void check_batch(const WeightDims& dims, const ActivationBatch& batch) {
  if (batch.dim() != dims.d || batch.layers() != dims.layers) {
    throw DimensionError("batch (L=" + std::to_string(batch.layers()) +
                         ", d=" + std::to_string(batch.dim()) + ") does not match weights " +
                         to_string(dims));
  }
}

template <typename Scalar>
void check_finite(std::span<const Scalar> values, const char* name) {
  for (const Scalar v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw DataError(std::string("non-finite entry in ") + name);
    }
  }
}

// ---------------------------------------------------------------------------
// Encoder forward, one routine per variant.

template <typename Scalar>
void encode_dense(const DenseWeights3<Scalar>& e, const ActivationBatch& batch,
                  Matrix<double>& out) {
  const auto [d, d_sae, layers] = e.dims;
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    double* row = out.row(t).data();
    const auto x = batch.token(t);
    for (std::size_t lj = 0; lj < layers * d; ++lj) {
      const double xv = x[lj];
      if (xv == 0.0) continue;
      const Scalar* w = e.entries.data() + lj * d_sae;
      for (std::size_t i = 0; i < d_sae; ++i) row[i] += xv * static_cast<double>(w[i]);
    }
  }
}

// Per token: H_l = sum_j x_lj g1[:, j, :] (R1 x R2), M = sum_l g3[:, l, :] H_l
// (R3 x R2), preact_i = sum_{b,c} g2[b, i, c] M[c, b].
template <typename Scalar>
void encode_tr(const TrFactors<Scalar>& f, const ActivationBatch& batch, Matrix<double>& out) {
  const auto [r1, r2, r3] = f.ranks();
  const auto [d, d_sae, layers] = f.dims();
  std::vector<double> h(r1 * r2);
  std::vector<double> m_t(r2 * r3);  // transposed M: m_t[b * r3 + c] = M[c, b]
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    std::fill(m_t.begin(), m_t.end(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      std::fill(h.begin(), h.end(), 0.0);
      const auto x = batch.at(t, l);
      bool any = false;
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[j];
        if (xv == 0.0) continue;
        any = true;
        for (std::size_t a = 0; a < r1; ++a) {
          const Scalar* g = &f.g1.flat()[f.g1.offset(a, j, 0)];
          double* hr = h.data() + a * r2;
          for (std::size_t b = 0; b < r2; ++b) hr[b] += xv * static_cast<double>(g[b]);
        }
      }
      if (!any) continue;
      for (std::size_t c = 0; c < r3; ++c) {
        for (std::size_t a = 0; a < r1; ++a) {
          const double g = f.g3(c, l, a);
          if (g == 0.0) continue;
          const double* hr = h.data() + a * r2;
          for (std::size_t b = 0; b < r2; ++b) m_t[b * r3 + c] += g * hr[b];
        }
      }
    }
    double* row = out.row(t).data();
    for (std::size_t b = 0; b < r2; ++b) {
      const double* mb = m_t.data() + b * r3;
      for (std::size_t i = 0; i < d_sae; ++i) {
        const Scalar* g = &f.g2.flat()[f.g2.offset(b, i, 0)];
        double s = 0.0;
        for (std::size_t c = 0; c < r3; ++c) s += static_cast<double>(g[c]) * mb[c];
        row[i] += s;
      }
    }
  }
}

// Per token: y_l = W^T x_l, w = sum_l v_l * y_l, preact = U w.
template <typename Scalar>
void encode_cp(const CpFactors<Scalar>& f, const ActivationBatch& batch, Matrix<double>& out) {
  const std::size_t rank = f.rank();
  const auto [d, d_sae, layers] = f.dims();
  std::vector<double> y(rank);
  std::vector<double> w(rank);
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      std::fill(y.begin(), y.end(), 0.0);
      const auto x = batch.at(t, l);
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[j];
        if (xv == 0.0) continue;
        const auto wr = f.w.row(j);
        for (std::size_t r = 0; r < rank; ++r) y[r] += xv * static_cast<double>(wr[r]);
      }
      const auto vr = f.v.row(l);
      for (std::size_t r = 0; r < rank; ++r) w[r] += static_cast<double>(vr[r]) * y[r];
    }
    double* row = out.row(t).data();
    for (std::size_t i = 0; i < d_sae; ++i) {
      const auto ur = f.u.row(i);
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += static_cast<double>(ur[r]) * w[r];
      row[i] += s;
    }
  }
}

// ---------------------------------------------------------------------------
// Decoder forward for one token, all layers. `out` is L x d, accumulated into.

template <typename Scalar>
void decode_token(const DenseWeights3<Scalar>& dw, std::span<const std::uint32_t> idx,
                  std::span<const double> val, std::size_t l_begin, std::size_t l_end,
                  double* out) {
  const auto [d, d_sae, layers] = dw.dims;
  for (std::size_t l = l_begin; l < l_end; ++l) {
    double* o = out + (l - l_begin) * d;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar* row = dw.entries.data() + (l * d + j) * d_sae;
      double s = 0.0;
      for (std::size_t n = 0; n < idx.size(); ++n) s += val[n] * static_cast<double>(row[idx[n]]);
      o[j] += s;
    }
  }
}

// Q = sum_i z_i g2[:, i, :] (R2 x R3); per layer P = Q g3[:, l, :] (R2 x R1);
// out_j = sum_{a,b} g1[a, j, b] P[b, a].
template <typename Scalar>
void decode_token(const TrFactors<Scalar>& f, std::span<const std::uint32_t> idx,
                  std::span<const double> val, std::size_t l_begin, std::size_t l_end,
                  double* out) {
  if (idx.empty()) return;
  const auto [r1, r2, r3] = f.ranks();
  const std::size_t d = f.g1.dim(1);
  std::vector<double> q(r2 * r3, 0.0);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    for (std::size_t b = 0; b < r2; ++b) {
      const Scalar* g = &f.g2.flat()[f.g2.offset(b, idx[n], 0)];
      double* qb = q.data() + b * r3;
      for (std::size_t c = 0; c < r3; ++c) qb[c] += val[n] * static_cast<double>(g[c]);
    }
  }
  std::vector<double> p_t(r1 * r2);  // p_t[a * r2 + b] = P[b, a]
  for (std::size_t l = l_begin; l < l_end; ++l) {
    std::fill(p_t.begin(), p_t.end(), 0.0);
    for (std::size_t b = 0; b < r2; ++b) {
      for (std::size_t c = 0; c < r3; ++c) {
        const double qv = q[b * r3 + c];
        if (qv == 0.0) continue;
        for (std::size_t a = 0; a < r1; ++a) p_t[a * r2 + b] += qv * static_cast<double>(f.g3(c, l, a));
      }
    }
    double* o = out + (l - l_begin) * d;
    for (std::size_t a = 0; a < r1; ++a) {
      const double* pa = p_t.data() + a * r2;
      for (std::size_t j = 0; j < d; ++j) {
        const Scalar* g = &f.g1.flat()[f.g1.offset(a, j, 0)];
        double s = 0.0;
        for (std::size_t b = 0; b < r2; ++b) s += static_cast<double>(g[b]) * pa[b];
        o[j] += s;
      }
    }
  }
}

// q = U^T z; out_lj = sum_r W_jr V_lr q_r.
template <typename Scalar>
void decode_token(const CpFactors<Scalar>& f, std::span<const std::uint32_t> idx,
                  std::span<const double> val, std::size_t l_begin, std::size_t l_end,
                  double* out) {
  if (idx.empty()) return;
  const std::size_t rank = f.rank();
  const std::size_t d = f.w.rows();
  std::vector<double> q(rank, 0.0);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto ur = f.u.row(idx[n]);
    for (std::size_t r = 0; r < rank; ++r) q[r] += val[n] * static_cast<double>(ur[r]);
  }
  std::vector<double> qv(rank);
  for (std::size_t l = l_begin; l < l_end; ++l) {
    const auto vr = f.v.row(l);
    for (std::size_t r = 0; r < rank; ++r) qv[r] = q[r] * static_cast<double>(vr[r]);
    double* o = out + (l - l_begin) * d;
    for (std::size_t j = 0; j < d; ++j) {
      const auto wr = f.w.row(j);
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += static_cast<double>(wr[r]) * qv[r];
      o[j] += s;
    }
  }
}

void check_code_indices(std::span<const std::uint32_t> idx, std::size_t d_sae) {
  for (const auto i : idx) {
    if (i >= d_sae) {
      throw DimensionError("code index " + std::to_string(i) + " >= d_sae " +
                           std::to_string(d_sae));
    }
  }
}

}  // namespace

std::string to_string(const WeightDims& dims) {
  return "(d=" + std::to_string(dims.d) + ", d_sae=" + std::to_string(dims.d_sae) +
         ", L=" + std::to_string(dims.layers) + ")";
}

template <typename Scalar>
WeightDims dims_of(const Weights<Scalar>& w) {
  return std::visit(Overloaded{[](const DenseWeights3<Scalar>& x) { return x.dims; },
                               [](const auto& x) { return x.dims(); }},
                    w);
}

template <typename Scalar>
void validate(const Weights<Scalar>& w) {
  std::visit(
      Overloaded{
          [](const DenseWeights3<Scalar>& x) {
            if (x.entries.size() != x.dims.d * x.dims.d_sae * x.dims.layers) {
              throw DimensionError("dense weights: entry count does not match " +
                                   to_string(x.dims));
            }
          },
          [](const TrFactors<Scalar>& f) {
            const auto [r1, r2, r3] = f.ranks();
            if (r1 == 0 || r2 == 0 || r3 == 0) throw DimensionError("TR ranks must be >= 1");
            if (f.g1.dim(2) != r2 || f.g2.dim(2) != r3 || f.g3.dim(2) != r1) {
              throw DimensionError("TR factor ranks do not close the ring");
            }
          },
          [](const CpFactors<Scalar>& f) {
            if (f.rank() == 0) throw DimensionError("CP rank must be >= 1");
            if (f.u.cols() != f.rank() || f.v.cols() != f.rank()) {
              throw DimensionError("CP factor ranks disagree");
            }
          }},
      w);
  for (const auto arr : parameter_arrays(w)) check_finite<Scalar>(arr, "weights");
}

template <typename Scalar>
std::vector<std::span<Scalar>> parameter_arrays(Weights<Scalar>& w) {
  return std::visit(
      Overloaded{
          [](DenseWeights3<Scalar>& x) { return std::vector<std::span<Scalar>>{x.entries}; },
          [](TrFactors<Scalar>& f) {
            return std::vector<std::span<Scalar>>{f.g1.flat(), f.g2.flat(), f.g3.flat()};
          },
          [](CpFactors<Scalar>& f) {
            return std::vector<std::span<Scalar>>{f.w.flat(), f.u.flat(), f.v.flat()};
          }},
      w);
}

template <typename Scalar>
std::vector<std::span<const Scalar>> parameter_arrays(const Weights<Scalar>& w) {
  return std::visit(
      Overloaded{[](const DenseWeights3<Scalar>& x) {
                   return std::vector<std::span<const Scalar>>{x.entries};
                 },
                 [](const TrFactors<Scalar>& f) {
                   return std::vector<std::span<const Scalar>>{f.g1.flat(), f.g2.flat(),
                                                               f.g3.flat()};
                 },
                 [](const CpFactors<Scalar>& f) {
                   return std::vector<std::span<const Scalar>>{f.w.flat(), f.u.flat(),
                                                               f.v.flat()};
                 }},
      w);
}

template <typename Scalar>
std::size_t parameter_count(const Weights<Scalar>& w) {
  std::size_t n = 0;
  for (const auto arr : parameter_arrays(w)) n += arr.size();
  return n;
}

template <typename Scalar>
Weights<Scalar> zeros_like(const Weights<Scalar>& w) {
  return std::visit(
      Overloaded{[](const DenseWeights3<Scalar>& x) -> Weights<Scalar> {
                   return DenseWeights3<Scalar>(x.dims);
                 },
                 [](const TrFactors<Scalar>& f) -> Weights<Scalar> {
                   return TrFactors<Scalar>(f.dims(), f.ranks());
                 },
                 [](const CpFactors<Scalar>& f) -> Weights<Scalar> {
                   return CpFactors<Scalar>(f.dims(), f.rank());
                 }},
      w);
}

template <typename Scalar>
Scalar tr_element(const TrFactors<Scalar>& f, std::size_t j, std::size_t i, std::size_t l) {
  const auto dims = f.dims();
  check_index(j, dims.d, "activation");
  check_index(i, dims.d_sae, "latent");
  check_index(l, dims.layers, "layer");
  const auto [r1, r2, r3] = f.ranks();
  double trace = 0.0;
  // Tr(A B C) = sum_a (A B C)[a, a]; build row a of A B, then dot with column a of C.
  std::vector<double> ab(r3);
  for (std::size_t a = 0; a < r1; ++a) {
    std::fill(ab.begin(), ab.end(), 0.0);
    for (std::size_t b = 0; b < r2; ++b) {
      const double g1 = f.g1(a, j, b);
      for (std::size_t c = 0; c < r3; ++c) ab[c] += g1 * static_cast<double>(f.g2(b, i, c));
    }
    for (std::size_t c = 0; c < r3; ++c) trace += ab[c] * static_cast<double>(f.g3(c, l, a));
  }
  return static_cast<Scalar>(trace);
}

template <typename Scalar>
Scalar cp_element(const CpFactors<Scalar>& f, std::size_t j, std::size_t i, std::size_t l) {
  const auto dims = f.dims();
  check_index(j, dims.d, "activation");
  check_index(i, dims.d_sae, "latent");
  check_index(l, dims.layers, "layer");
  double s = 0.0;
  for (std::size_t r = 0; r < f.rank(); ++r) {
    s += static_cast<double>(f.w(j, r)) * static_cast<double>(f.u(i, r)) *
         static_cast<double>(f.v(l, r));
  }
  return static_cast<Scalar>(s);
}

template <typename Scalar>
DenseWeights3<Scalar> materialize(const TrFactors<Scalar>& f, WeightDims target) {
  if (f.dims() != target) {
    throw DimensionError("materialize: TR factors have dims " + to_string(f.dims()) +
                         ", target " + to_string(target));
  }
  DenseWeights3<Scalar> out(target);
  for (std::size_t l = 0; l < target.layers; ++l) {
    for (std::size_t j = 0; j < target.d; ++j) {
      for (std::size_t i = 0; i < target.d_sae; ++i) out.at(j, i, l) = tr_element(f, j, i, l);
    }
  }
  return out;
}

template <typename Scalar>
DenseWeights3<Scalar> materialize(const CpFactors<Scalar>& f, WeightDims target) {
  if (f.dims() != target) {
    throw DimensionError("materialize: CP factors have dims " + to_string(f.dims()) +
                         ", target " + to_string(target));
  }
  DenseWeights3<Scalar> out(target);
  for (std::size_t l = 0; l < target.layers; ++l) {
    for (std::size_t j = 0; j < target.d; ++j) {
      for (std::size_t i = 0; i < target.d_sae; ++i) out.at(j, i, l) = cp_element(f, j, i, l);
    }
  }
  return out;
}

template <typename Scalar>
DenseWeights3<Scalar> materialize(const Weights<Scalar>& w) {
  return std::visit(Overloaded{[](const DenseWeights3<Scalar>& x) { return x; },
                               [](const auto& f) { return materialize(f, f.dims()); }},
                    w);
}

template <typename Scalar>
Matrix<double> encoder_contract(const Weights<Scalar>& enc, const ActivationBatch& batch) {
  const WeightDims dims = dims_of(enc);
  check_batch(dims, batch);
  Matrix<double> out(batch.tokens(), dims.d_sae);
  std::visit(Overloaded{[&](const DenseWeights3<Scalar>& e) { encode_dense(e, batch, out); },
                        [&](const TrFactors<Scalar>& f) { encode_tr(f, batch, out); },
                        [&](const CpFactors<Scalar>& f) { encode_cp(f, batch, out); }},
             enc);
  return out;
}

template <typename Scalar>
std::vector<double> decoder_apply(const Weights<Scalar>& dec,
                                  std::span<const std::uint32_t> indices,
                                  std::span<const double> values, std::size_t l) {
  const WeightDims dims = dims_of(dec);
  check_index(l, dims.layers, "layer");
  if (indices.size() != values.size()) throw DimensionError("code indices/values length mismatch");
  check_code_indices(indices, dims.d_sae);
  std::vector<double> out(dims.d, 0.0);
  std::visit([&](const auto& w) { decode_token(w, indices, values, l, l + 1, out.data()); }, dec);
  return out;
}

template <typename Scalar>
std::vector<double> decoder_apply_batch(const Weights<Scalar>& dec, const SparseCode& code) {
  const WeightDims dims = dims_of(dec);
  if (code.width() != dims.d_sae) {
    throw DimensionError("code width " + std::to_string(code.width()) + " != d_sae " +
                         std::to_string(dims.d_sae));
  }
  const std::size_t stride = dims.layers * dims.d;
  std::vector<double> out(code.tokens() * stride, 0.0);
  std::visit(
      [&](const auto& w) {
        for (std::size_t t = 0; t < code.tokens(); ++t) {
          check_code_indices(code.indices(t), dims.d_sae);
          decode_token(w, code.indices(t), code.values(t), 0, dims.layers,
                       out.data() + t * stride);
        }
      },
      dec);
  return out;
}

template <typename Scalar>
std::vector<Scalar> decoder_fiber(const Weights<Scalar>& dec, std::size_t i, std::size_t l) {
  const WeightDims dims = dims_of(dec);
  check_index(i, dims.d_sae, "latent");
  check_index(l, dims.layers, "layer");
  std::vector<Scalar> out(dims.d);
  std::visit(
      Overloaded{
          [&](const DenseWeights3<Scalar>& w) {
            for (std::size_t j = 0; j < dims.d; ++j) out[j] = w.at(j, i, l);
          },
          [&](const TrFactors<Scalar>& f) {
            // P = g2[:, i, :] g3[:, l, :] (R2 x R1); fiber_j = sum_{a,b} g1[a,j,b] P[b,a].
            const auto [r1, r2, r3] = f.ranks();
            std::vector<double> p(r2 * r1, 0.0);
            for (std::size_t b = 0; b < r2; ++b) {
              for (std::size_t c = 0; c < r3; ++c) {
                const double g = f.g2(b, i, c);
                for (std::size_t a = 0; a < r1; ++a) p[b * r1 + a] += g * static_cast<double>(f.g3(c, l, a));
              }
            }
            for (std::size_t j = 0; j < dims.d; ++j) {
              double s = 0.0;
              for (std::size_t a = 0; a < r1; ++a) {
                for (std::size_t b = 0; b < r2; ++b) s += static_cast<double>(f.g1(a, j, b)) * p[b * r1 + a];
              }
              out[j] = static_cast<Scalar>(s);
            }
          },
          [&](const CpFactors<Scalar>& f) {
            for (std::size_t j = 0; j < dims.d; ++j) out[j] = cp_element(f, j, i, l);
          }},
      dec);
  return out;
}

// ---------------------------------------------------------------------------
// Backward.

void encoder_backward(const Weights<double>& enc, const ActivationBatch& batch,
                      const SparseCode& dpre, Weights<double>& grad) {
  const WeightDims dims = dims_of(enc);
  check_batch(dims, batch);
  if (dpre.tokens() != batch.tokens() || dpre.width() != dims.d_sae) {
    throw DimensionError("encoder_backward: gradient rows do not match batch");
  }
  if (grad.index() != enc.index() || dims_of(grad) != dims) {
    throw DimensionError("encoder_backward: gradient buffer does not match weights");
  }
  const std::size_t d = dims.d;
  const std::size_t layers = dims.layers;

  if (const auto* e = std::get_if<DenseWeights3<double>>(&enc)) {
    auto& g = std::get<DenseWeights3<double>>(grad);
    const std::size_t d_sae = e->dims.d_sae;
    for (std::size_t t = 0; t < batch.tokens(); ++t) {
      const auto idx = dpre.indices(t);
      const auto val = dpre.values(t);
      if (idx.empty()) continue;
      const auto x = batch.token(t);
      for (std::size_t lj = 0; lj < layers * d; ++lj) {
        const double xv = x[lj];
        if (xv == 0.0) continue;
        double* row = g.entries.data() + lj * d_sae;
        for (std::size_t n = 0; n < idx.size(); ++n) row[idx[n]] += xv * val[n];
      }
    }
    return;
  }

  if (const auto* f = std::get_if<TrFactors<double>>(&enc)) {
    auto& g = std::get<TrFactors<double>>(grad);
    const auto [r1, r2, r3] = f->ranks();
    std::vector<double> h(layers * r1 * r2);  // H_l[a, b]
    std::vector<double> m(r3 * r2);           // M[c, b]
    std::vector<double> dm(r3 * r2);
    std::vector<double> dh(r1 * r2);
    for (std::size_t t = 0; t < batch.tokens(); ++t) {
      const auto idx = dpre.indices(t);
      const auto val = dpre.values(t);
      if (idx.empty()) continue;
      std::fill(h.begin(), h.end(), 0.0);
      std::fill(m.begin(), m.end(), 0.0);
      for (std::size_t l = 0; l < layers; ++l) {
        double* hl = h.data() + l * r1 * r2;
        const auto x = batch.at(t, l);
        for (std::size_t j = 0; j < d; ++j) {
          const double xv = x[j];
          if (xv == 0.0) continue;
          for (std::size_t a = 0; a < r1; ++a) {
            for (std::size_t b = 0; b < r2; ++b) hl[a * r2 + b] += xv * f->g1(a, j, b);
          }
        }
        for (std::size_t c = 0; c < r3; ++c) {
          for (std::size_t a = 0; a < r1; ++a) {
            const double gv = f->g3(c, l, a);
            for (std::size_t b = 0; b < r2; ++b) m[c * r2 + b] += gv * hl[a * r2 + b];
          }
        }
      }
      // dM[c, b] = sum_i dpre_i g2[b, i, c]; dg2[b, i, c] += dpre_i M[c, b].
      std::fill(dm.begin(), dm.end(), 0.0);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        const std::size_t i = idx[n];
        const double gi = val[n];
        for (std::size_t b = 0; b < r2; ++b) {
          for (std::size_t c = 0; c < r3; ++c) {
            dm[c * r2 + b] += gi * f->g2(b, i, c);
            g.g2(b, i, c) += gi * m[c * r2 + b];
          }
        }
      }
      for (std::size_t l = 0; l < layers; ++l) {
        const double* hl = h.data() + l * r1 * r2;
        // dg3[c, l, a] += sum_b dM[c, b] H_l[a, b]; dH_l[a, b] = sum_c g3[c, l, a] dM[c, b].
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t c = 0; c < r3; ++c) {
          for (std::size_t a = 0; a < r1; ++a) {
            double s = 0.0;
            const double gv = f->g3(c, l, a);
            for (std::size_t b = 0; b < r2; ++b) {
              s += dm[c * r2 + b] * hl[a * r2 + b];
              dh[a * r2 + b] += gv * dm[c * r2 + b];
            }
            g.g3(c, l, a) += s;
          }
        }
        // dg1[a, j, b] += x_lj dH_l[a, b].
        const auto x = batch.at(t, l);
        for (std::size_t j = 0; j < d; ++j) {
          const double xv = x[j];
          if (xv == 0.0) continue;
          for (std::size_t a = 0; a < r1; ++a) {
            for (std::size_t b = 0; b < r2; ++b) g.g1(a, j, b) += xv * dh[a * r2 + b];
          }
        }
      }
    }
    return;
  }

  const auto& f = std::get<CpFactors<double>>(enc);
  auto& g = std::get<CpFactors<double>>(grad);
  const std::size_t rank = f.rank();
  std::vector<double> y(layers * rank);
  std::vector<double> w(rank);
  std::vector<double> dw(rank);
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    const auto idx = dpre.indices(t);
    const auto val = dpre.values(t);
    if (idx.empty()) continue;
    std::fill(y.begin(), y.end(), 0.0);
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      double* yl = y.data() + l * rank;
      const auto x = batch.at(t, l);
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[j];
        if (xv == 0.0) continue;
        for (std::size_t r = 0; r < rank; ++r) yl[r] += xv * f.w(j, r);
      }
      for (std::size_t r = 0; r < rank; ++r) w[r] += f.v(l, r) * yl[r];
    }
    std::fill(dw.begin(), dw.end(), 0.0);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const std::size_t i = idx[n];
      for (std::size_t r = 0; r < rank; ++r) {
        dw[r] += val[n] * f.u(i, r);
        g.u(i, r) += val[n] * w[r];
      }
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const double* yl = y.data() + l * rank;
      for (std::size_t r = 0; r < rank; ++r) g.v(l, r) += dw[r] * yl[r];
      const auto x = batch.at(t, l);
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[j];
        if (xv == 0.0) continue;
        for (std::size_t r = 0; r < rank; ++r) g.w(j, r) += xv * dw[r] * f.v(l, r);
      }
    }
  }
}

std::vector<double> decoder_backward(const Weights<double>& dec, const SparseCode& code,
                                     std::span<const double> drecon, Weights<double>& grad) {
  const WeightDims dims = dims_of(dec);
  const std::size_t d = dims.d;
  const std::size_t layers = dims.layers;
  const std::size_t stride = layers * d;
  if (code.width() != dims.d_sae || drecon.size() != code.tokens() * stride) {
    throw DimensionError("decoder_backward: code/gradient shape does not match weights");
  }
  if (grad.index() != dec.index() || dims_of(grad) != dims) {
    throw DimensionError("decoder_backward: gradient buffer does not match weights");
  }
  std::vector<double> dz(code.nnz(), 0.0);

  if (const auto* dw = std::get_if<DenseWeights3<double>>(&dec)) {
    auto& g = std::get<DenseWeights3<double>>(grad);
    const std::size_t d_sae = dims.d_sae;
    for (std::size_t t = 0; t < code.tokens(); ++t) {
      const auto idx = code.indices(t);
      const auto val = code.values(t);
      double* dzt = dz.data() + code.offset(t);
      const double* go = drecon.data() + t * stride;
      for (std::size_t lj = 0; lj < stride; ++lj) {
        const double gv = go[lj];
        if (gv == 0.0) continue;
        const double* row = dw->entries.data() + lj * d_sae;
        double* grow = g.entries.data() + lj * d_sae;
        for (std::size_t n = 0; n < idx.size(); ++n) {
          grow[idx[n]] += gv * val[n];
          dzt[n] += gv * row[idx[n]];
        }
      }
    }
    return dz;
  }

  if (const auto* f = std::get_if<TrFactors<double>>(&dec)) {
    auto& g = std::get<TrFactors<double>>(grad);
    const auto [r1, r2, r3] = f->ranks();
    std::vector<double> q(r2 * r3);
    std::vector<double> dq(r2 * r3);
    std::vector<double> p(r2 * r1);
    std::vector<double> dp(r2 * r1);
    for (std::size_t t = 0; t < code.tokens(); ++t) {
      const auto idx = code.indices(t);
      const auto val = code.values(t);
      if (idx.empty()) continue;
      std::fill(q.begin(), q.end(), 0.0);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        for (std::size_t b = 0; b < r2; ++b) {
          for (std::size_t c = 0; c < r3; ++c) q[b * r3 + c] += val[n] * f->g2(b, idx[n], c);
        }
      }
      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t l = 0; l < layers; ++l) {
        const double* go = drecon.data() + t * stride + l * d;
        // P[b, a] = sum_c Q[b, c] g3[c, l, a].
        std::fill(p.begin(), p.end(), 0.0);
        for (std::size_t b = 0; b < r2; ++b) {
          for (std::size_t c = 0; c < r3; ++c) {
            const double qv = q[b * r3 + c];
            for (std::size_t a = 0; a < r1; ++a) p[b * r1 + a] += qv * f->g3(c, l, a);
          }
        }
        // dP[b, a] = sum_j go_j g1[a, j, b]; dg1[a, j, b] += go_j P[b, a].
        std::fill(dp.begin(), dp.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
          const double gv = go[j];
          if (gv == 0.0) continue;
          for (std::size_t a = 0; a < r1; ++a) {
            for (std::size_t b = 0; b < r2; ++b) {
              dp[b * r1 + a] += gv * f->g1(a, j, b);
              g.g1(a, j, b) += gv * p[b * r1 + a];
            }
          }
        }
        // dg3[c, l, a] += sum_b Q[b, c] dP[b, a]; dQ[b, c] += sum_a dP[b, a] g3[c, l, a].
        for (std::size_t c = 0; c < r3; ++c) {
          for (std::size_t a = 0; a < r1; ++a) {
            const double gv = f->g3(c, l, a);
            double s = 0.0;
            for (std::size_t b = 0; b < r2; ++b) {
              s += q[b * r3 + c] * dp[b * r1 + a];
              dq[b * r3 + c] += dp[b * r1 + a] * gv;
            }
            g.g3(c, l, a) += s;
          }
        }
      }
      double* dzt = dz.data() + code.offset(t);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        double s = 0.0;
        for (std::size_t b = 0; b < r2; ++b) {
          for (std::size_t c = 0; c < r3; ++c) {
            s += f->g2(b, idx[n], c) * dq[b * r3 + c];
            g.g2(b, idx[n], c) += val[n] * dq[b * r3 + c];
          }
        }
        dzt[n] = s;
      }
    }
    return dz;
  }

  const auto& f = std::get<CpFactors<double>>(dec);
  auto& g = std::get<CpFactors<double>>(grad);
  const std::size_t rank = f.rank();
  std::vector<double> q(rank);
  std::vector<double> s(layers * rank);
  std::vector<double> dq(rank);
  for (std::size_t t = 0; t < code.tokens(); ++t) {
    const auto idx = code.indices(t);
    const auto val = code.values(t);
    if (idx.empty()) continue;
    std::fill(q.begin(), q.end(), 0.0);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      for (std::size_t r = 0; r < rank; ++r) q[r] += val[n] * f.u(idx[n], r);
    }
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      const double* go = drecon.data() + t * stride + l * d;
      double* sl = s.data() + l * rank;
      for (std::size_t j = 0; j < d; ++j) {
        const double gv = go[j];
        if (gv == 0.0) continue;
        for (std::size_t r = 0; r < rank; ++r) {
          sl[r] += gv * f.w(j, r);
          g.w(j, r) += gv * f.v(l, r) * q[r];
        }
      }
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      const double* sl = s.data() + l * rank;
      for (std::size_t r = 0; r < rank; ++r) {
        g.v(l, r) += q[r] * sl[r];
        dq[r] += f.v(l, r) * sl[r];
      }
    }
    double* dzt = dz.data() + code.offset(t);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rank; ++r) {
        acc += f.u(idx[n], r) * dq[r];
        g.u(idx[n], r) += val[n] * dq[r];
      }
      dzt[n] = acc;
    }
  }
  return dz;
}

#define FMX_INSTANTIATE(S)                                                                  \
  template WeightDims dims_of<S>(const Weights<S>&);                                        \
  template void validate<S>(const Weights<S>&);                                             \
  template std::vector<std::span<S>> parameter_arrays<S>(Weights<S>&);                      \
  template std::vector<std::span<const S>> parameter_arrays<S>(const Weights<S>&);          \
  template std::size_t parameter_count<S>(const Weights<S>&);                               \
  template Weights<S> zeros_like<S>(const Weights<S>&);                                     \
  template S tr_element<S>(const TrFactors<S>&, std::size_t, std::size_t, std::size_t);     \
  template S cp_element<S>(const CpFactors<S>&, std::size_t, std::size_t, std::size_t);     \
  template DenseWeights3<S> materialize<S>(const TrFactors<S>&, WeightDims);                \
  template DenseWeights3<S> materialize<S>(const CpFactors<S>&, WeightDims);                \
  template DenseWeights3<S> materialize<S>(const Weights<S>&);                              \
  template Matrix<double> encoder_contract<S>(const Weights<S>&, const ActivationBatch&);   \
  template std::vector<double> decoder_apply<S>(const Weights<S>&,                          \
                                                std::span<const std::uint32_t>,             \
                                                std::span<const double>, std::size_t);      \
  template std::vector<double> decoder_apply_batch<S>(const Weights<S>&, const SparseCode&); \
  template std::vector<S> decoder_fiber<S>(const Weights<S>&, std::size_t, std::size_t);

FMX_INSTANTIATE(float)
FMX_INSTANTIATE(double)

#undef FMX_INSTANTIATE

}  // namespace fmx
