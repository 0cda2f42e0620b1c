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
#include <span>
#include <vector>

#include "fmx/tensor.hpp"

namespace fmx {

// Per-token sparse rows in CSR form. Within a token, entries are sorted by
// latent index. As a model output (the code z) every value is > 0 and
// indices are unique; validate() checks that. The same layout carries
// per-entry gradients during the backward pass, where values may have any
// sign.
class SparseCode {
 public:
  SparseCode() : offsets_{0} {}
  SparseCode(std::size_t tokens, std::size_t width);

  std::size_t tokens() const { return offsets_.size() - 1; }
  std::size_t width() const { return width_; }
  std::size_t nnz() const { return indices_.size(); }

  std::span<const std::uint32_t> indices(std::size_t t) const {
    return {indices_.data() + offsets_[t], offsets_[t + 1] - offsets_[t]};
  }
  std::span<const double> values(std::size_t t) const {
    return {values_.data() + offsets_[t], offsets_[t + 1] - offsets_[t]};
  }
  std::span<double> values(std::size_t t) {
    return {values_.data() + offsets_[t], offsets_[t + 1] - offsets_[t]};
  }
  std::span<const double> all_values() const { return values_; }
  std::span<double> all_values() { return values_; }
  std::size_t offset(std::size_t t) const { return offsets_[t]; }

  // Value of latent i at token t, 0 when absent.
  double value(std::size_t t, std::size_t i) const;

  // Builder interface: append one token's entries. `entries` need not be
  // sorted; they are sorted by index on insertion.
  struct Entry {
    std::uint32_t index;
    double value;
  };
  void push_token(std::vector<Entry> entries);

  // Same sparsity pattern, values replaced by `values` (size nnz()).
  SparseCode with_values(std::vector<double> values) const;

  // Dense T x width copy.
  Matrix<double> to_dense() const;

  // Throws DataError if any value is non-positive, any index is out of range
  // or duplicated within a token.
  void validate() const;

  friend bool operator==(const SparseCode&, const SparseCode&) = default;

 private:
  std::size_t width_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

}  // namespace fmx
