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

#include "fmx/sparse_code.hpp"

#include <algorithm>
#include <string>

#include "fmx/errors.hpp"

namespace fmx {

SparseCode::SparseCode(std::size_t tokens, std::size_t width)
    : width_(width), offsets_(tokens + 1, 0) {}

double SparseCode::value(std::size_t t, std::size_t i) const {
  const auto idx = indices(t);
  const auto it = std::lower_bound(idx.begin(), idx.end(), static_cast<std::uint32_t>(i));
  if (it == idx.end() || *it != i) return 0.0;
  return values_[offsets_[t] + static_cast<std::size_t>(it - idx.begin())];
}

void SparseCode::push_token(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.index < b.index; });
  for (const auto& e : entries) {
    indices_.push_back(e.index);
    values_.push_back(e.value);
  }
  offsets_.push_back(indices_.size());
}

SparseCode SparseCode::with_values(std::vector<double> values) const {
  if (values.size() != nnz()) {
    throw DimensionError("with_values: expected " + std::to_string(nnz()) + " values");
  }
  SparseCode out = *this;
  out.values_ = std::move(values);
  return out;
}

Matrix<double> SparseCode::to_dense() const {
  Matrix<double> out(tokens(), width_);
  for (std::size_t t = 0; t < tokens(); ++t) {
    const auto idx = indices(t);
    const auto val = values(t);
    for (std::size_t n = 0; n < idx.size(); ++n) out(t, idx[n]) = val[n];
  }
  return out;
}

void SparseCode::validate() const {
  for (std::size_t t = 0; t < tokens(); ++t) {
    const auto idx = indices(t);
    const auto val = values(t);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      if (idx[n] >= width_) {
        throw DataError("code index " + std::to_string(idx[n]) + " >= width at token " +
                        std::to_string(t));
      }
      if (n > 0 && idx[n] <= idx[n - 1]) {
        throw DataError("duplicate code index at token " + std::to_string(t));
      }
      if (!(val[n] > 0.0)) {
        throw DataError("non-positive code value at token " + std::to_string(t));
      }
    }
  }
}

}  // namespace fmx
