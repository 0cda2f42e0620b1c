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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fmx {

// Token-major block of per-layer activations: entry (t, l, j) lives at
// data[(t * L + l) * d + j]. Labels and sequence ids are optional side
// channels carried through the activation cache.
class ActivationBatch {
 public:
  ActivationBatch() = default;
  ActivationBatch(std::size_t tokens, std::size_t layers, std::size_t dim);
  ActivationBatch(std::size_t tokens, std::size_t layers, std::size_t dim,
                  std::vector<float> data);

  std::size_t tokens() const { return tokens_; }
  std::size_t layers() const { return layers_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return tokens_ == 0; }

  std::span<float> at(std::size_t t, std::size_t l) {
    return {data_.data() + (t * layers_ + l) * dim_, dim_};
  }
  std::span<const float> at(std::size_t t, std::size_t l) const {
    return {data_.data() + (t * layers_ + l) * dim_, dim_};
  }
  // All L*d values of one token.
  std::span<const float> token(std::size_t t) const {
    return {data_.data() + t * layers_ * dim_, layers_ * dim_};
  }

  std::span<float> flat() { return data_; }
  std::span<const float> flat() const { return data_; }

  const std::optional<std::vector<std::uint8_t>>& labels() const { return labels_; }
  void set_labels(std::vector<std::uint8_t> labels);
  void clear_labels() { labels_.reset(); }

  const std::optional<std::vector<std::uint32_t>>& sequence_ids() const {
    return sequence_ids_;
  }
  void set_sequence_ids(std::vector<std::uint32_t> ids);

  // Throws DataError on NaN/Inf.
  void check_finite() const;

  // Copy of tokens [begin, end), side channels included.
  ActivationBatch slice(std::size_t begin, std::size_t end) const;
  // Copy with every token's layer `l` set to zero (the M_l operator).
  ActivationBatch with_layer_zeroed(std::size_t l) const;
  // Single-layer view as an L = 1 batch (used by the per-layer SAE baseline).
  ActivationBatch layer(std::size_t l) const;

  friend bool operator==(const ActivationBatch&, const ActivationBatch&) = default;

 private:
  std::size_t tokens_ = 0;
  std::size_t layers_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::optional<std::vector<std::uint8_t>> labels_;
  std::optional<std::vector<std::uint32_t>> sequence_ids_;
};

// Per (layer, coordinate) mean over tokens, L x d; subtract_means removes
// it in place.
std::vector<double> layer_means(const ActivationBatch& batch);
void subtract_means(ActivationBatch& batch, std::span<const double> means);

}  // namespace fmx
