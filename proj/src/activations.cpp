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

#include "fmx/activations.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmx/errors.hpp"

namespace fmx {

ActivationBatch::ActivationBatch(std::size_t tokens, std::size_t layers,
                                 std::size_t dim)
    : tokens_(tokens), layers_(layers), dim_(dim), data_(tokens * layers * dim, 0.0f) {}

ActivationBatch::ActivationBatch(std::size_t tokens, std::size_t layers,
                                 std::size_t dim, std::vector<float> data)
    : tokens_(tokens), layers_(layers), dim_(dim), data_(std::move(data)) {
  if (data_.size() != tokens * layers * dim) {
    throw DimensionError("activation payload has " + std::to_string(data_.size()) +
                         " values, expected T*L*d = " +
                         std::to_string(tokens * layers * dim));
  }
}

void ActivationBatch::set_labels(std::vector<std::uint8_t> labels) {
  if (labels.size() != tokens_) {
    throw DimensionError("label count " + std::to_string(labels.size()) +
                         " != token count " + std::to_string(tokens_));
  }
  for (auto& v : labels) v = v ? 1 : 0;
  labels_ = std::move(labels);
}

void ActivationBatch::set_sequence_ids(std::vector<std::uint32_t> ids) {
  if (ids.size() != tokens_) {
    throw DimensionError("sequence id count " + std::to_string(ids.size()) +
                         " != token count " + std::to_string(tokens_));
  }
  sequence_ids_ = std::move(ids);
}

void ActivationBatch::check_finite() const {
  for (std::size_t n = 0; n < data_.size(); ++n) {
    if (!std::isfinite(data_[n])) {
      const std::size_t t = n / (layers_ * dim_);
      const std::size_t l = (n / dim_) % layers_;
      throw DataError("non-finite activation at token " + std::to_string(t) +
                      ", layer " + std::to_string(l));
    }
  }
}

ActivationBatch ActivationBatch::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, tokens_);
  begin = std::min(begin, end);
  const std::size_t stride = layers_ * dim_;
  ActivationBatch out(end - begin, layers_, dim_,
                      std::vector<float>(data_.begin() + begin * stride,
                                         data_.begin() + end * stride));
  if (labels_) {
    out.labels_ = std::vector<std::uint8_t>(labels_->begin() + begin,
                                            labels_->begin() + end);
  }
  if (sequence_ids_) {
    out.sequence_ids_ = std::vector<std::uint32_t>(sequence_ids_->begin() + begin,
                                                   sequence_ids_->begin() + end);
  }
  return out;
}

ActivationBatch ActivationBatch::with_layer_zeroed(std::size_t l) const {
  ActivationBatch out = *this;
  for (std::size_t t = 0; t < tokens_; ++t) {
    auto x = out.at(t, l);
    std::fill(x.begin(), x.end(), 0.0f);
  }
  return out;
}

ActivationBatch ActivationBatch::layer(std::size_t l) const {
  if (l >= layers_) throw IndexError("layer " + std::to_string(l) + " out of range");
  ActivationBatch out(tokens_, 1, dim_);
  for (std::size_t t = 0; t < tokens_; ++t) {
    const auto src = at(t, l);
    std::copy(src.begin(), src.end(), out.at(t, 0).begin());
  }
  out.labels_ = labels_;
  out.sequence_ids_ = sequence_ids_;
  return out;
}

std::vector<double> layer_means(const ActivationBatch& batch) {
  const std::size_t stride = batch.layers() * batch.dim();
  std::vector<double> mean(stride, 0.0);
  if (batch.empty()) return mean;
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    const auto x = batch.token(t);
    for (std::size_t n = 0; n < stride; ++n) mean[n] += x[n];
  }
  for (auto& m : mean) m /= static_cast<double>(batch.tokens());
  return mean;
}

void subtract_means(ActivationBatch& batch, std::span<const double> means) {
  const std::size_t stride = batch.layers() * batch.dim();
  if (means.size() != stride) throw DimensionError("mean vector does not match L x d");
  auto flat = batch.flat();
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    for (std::size_t n = 0; n < stride; ++n) {
      flat[t * stride + n] = static_cast<float>(flat[t * stride + n] - means[n]);
    }
  }
}

}  // namespace fmx
