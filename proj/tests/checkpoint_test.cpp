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

#include "fmx/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "fmx/errors.hpp"
#include "fmx/training.hpp"

namespace fmx {
namespace {

CrosscoderModel sample(Variant v, std::uint64_t seed) {
  Rng rng(seed);
  auto m = init_model({5, 12, 3}, v, {2, 3, 2}, 3, 0.1, rng);
  for (auto& b : m.b_enc) b = standard_normal(rng);
  for (auto& b : m.b_dec.flat()) b = standard_normal(rng);
  return m;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "fmx_ckpt_test";
  std::filesystem::create_directories(dir);
  for (Variant v : {Variant::kDense, Variant::kTr, Variant::kCp}) {
    const auto m = sample(v, 1 + static_cast<int>(v));
    const auto path = dir / ("m" + to_string(v) + ".fmxc");
    save_checkpoint(m, path);
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded, round_to_f32(m));
    EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(m));
    EXPECT_EQ(load_checkpoint(path), loaded);
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptHeadersRaiseFormatErrors) {
  const auto good = serialize_checkpoint(sample(Variant::kTr, 4));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);

  auto bad_version = good;
  bad_version[5] = 9;
  try {
    deserialize_checkpoint(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }

  auto bad_tag = good;
  bad_tag[9] = 7;
  EXPECT_THROW(deserialize_checkpoint(bad_tag), FormatError);

  auto bad_dims = good;
  bad_dims[13] = 99;  // d
  EXPECT_THROW(deserialize_checkpoint(bad_dims), FormatError);

  // Every truncation point is reported, never a crash.
  for (std::size_t n = 0; n < good.size(); n += 7) {
    EXPECT_THROW(deserialize_checkpoint(std::vector<char>(good.begin(), good.begin() + n)),
                 FormatError);
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), FormatError);

  auto nan_payload = good;
  const float nan = std::nanf("");
  std::memcpy(nan_payload.data() + nan_payload.size() - 4, &nan, 4);
  EXPECT_THROW(deserialize_checkpoint(nan_payload), FormatError);
}

TEST(Checkpoint, HugeHeaderDimsDoNotAllocate) {
  auto bytes = serialize_checkpoint(sample(Variant::kDense, 5));
  const std::uint32_t huge = 0xfffffff0u;
  std::memcpy(bytes.data() + 13, &huge, 4);
  std::memcpy(bytes.data() + 17, &huge, 4);
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, MissingFileIsDataError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.fmxc"), DataError);
}

}  // namespace
}  // namespace fmx
