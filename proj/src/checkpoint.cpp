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

#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "fmx/errors.hpp"

namespace fmx {

namespace {

constexpr std::string_view kMagic = "FMXC1";

template <typename Model, typename Fn>
void for_each_array(Model& m, Fn&& fn) {
  for (auto arr : parameter_spans(m)) fn(arr);
}

std::array<std::size_t, 3> ranks_of(const CrosscoderModel& m) {
  if (const auto* f = std::get_if<TrFactors<double>>(&m.encoder)) return f->ranks();
  if (const auto* f = std::get_if<CpFactors<double>>(&m.encoder)) return {f->rank(), 0, 0};
  return {0, 0, 0};
}

std::uint32_t narrow_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw DimensionError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<char> serialize_checkpoint(const CrosscoderModel& m) {
  m.validate();
  const WeightDims dims = m.dims();
  const auto ranks = ranks_of(m);
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.variant()));
  w.put<std::uint32_t>(narrow_u32(dims.d, "d"));
  w.put<std::uint32_t>(narrow_u32(dims.d_sae, "d_sae"));
  w.put<std::uint32_t>(narrow_u32(dims.layers, "L"));
  for (auto r : ranks) w.put<std::uint32_t>(narrow_u32(r, "rank"));
  w.put<std::uint32_t>(narrow_u32(m.k, "k"));
  w.put<float>(static_cast<float>(m.mask_p));
  std::vector<float> tmp;
  for_each_array(m, [&](std::span<const double> arr) {
    tmp.assign(arr.begin(), arr.end());
    w.put_array(tmp.data(), tmp.size());
  });
  return w.buffer();
}

CrosscoderModel deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.expect_magic(kMagic);
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const std::size_t tag_at = r.offset();
  const auto tag = r.get<std::uint32_t>("variant tag");
  if (tag > 2) throw FormatError("unknown variant tag " + std::to_string(tag), tag_at);
  const std::size_t dims_at = r.offset();
  WeightDims dims;
  dims.d = r.get<std::uint32_t>("d");
  dims.d_sae = r.get<std::uint32_t>("d_sae");
  dims.layers = r.get<std::uint32_t>("L");
  const std::size_t ranks_at = r.offset();
  std::array<std::size_t, 3> ranks{};
  for (auto& rk : ranks) rk = r.get<std::uint32_t>("rank");
  const std::size_t k_at = r.offset();
  const auto k = r.get<std::uint32_t>("k");
  const float mask_p = r.get<float>("mask_p");
  const std::size_t payload_at = r.offset();

  if (dims.d == 0 || dims.d_sae == 0 || dims.layers == 0) {
    throw FormatError("zero dimension in header", dims_at);
  }
  const auto variant = static_cast<Variant>(tag);
  // Slots the variant does not use must be zero.
  const std::size_t used = variant == Variant::kTr ? 3 : variant == Variant::kCp ? 1 : 0;
  for (std::size_t n = used; n < 3; ++n) {
    if (ranks[n] != 0) throw FormatError("unused rank slot is nonzero", ranks_at + 4 * n);
  }
  // Check the payload size against the header before allocating anything.
  unsigned __int128 floats = 0;
  const unsigned __int128 d = dims.d, s = dims.d_sae, l = dims.layers;
  switch (variant) {
    case Variant::kDense:
      floats = 2 * d * s * l;
      break;
    case Variant::kTr:
      if (ranks[0] == 0 || ranks[1] == 0 || ranks[2] == 0) {
        throw FormatError("zero TR rank in header", dims_at);
      }
      floats = 2 * (static_cast<unsigned __int128>(ranks[0]) * d * ranks[1] +
                    static_cast<unsigned __int128>(ranks[1]) * s * ranks[2] +
                    static_cast<unsigned __int128>(ranks[2]) * l * ranks[0]);
      break;
    case Variant::kCp:
      if (ranks[0] == 0) throw FormatError("zero CP rank in header", dims_at);
      floats = 2 * static_cast<unsigned __int128>(ranks[0]) * (d + s + l);
      break;
  }
  floats += s + l * d;
  if (floats * 4 != r.remaining()) {
    throw FormatError("payload holds " + std::to_string(r.remaining()) +
                          " bytes but header implies " +
                          std::to_string(static_cast<unsigned long long>(floats * 4)),
                      payload_at);
  }
  if (k == 0 || k > dims.d_sae) throw FormatError("k outside [1, d_sae]", k_at);
  if (!(mask_p >= 0.0f && mask_p <= 1.0f)) throw FormatError("mask_p outside [0, 1]", k_at + 4);

  CrosscoderModel m = make_model(dims, variant, ranks, k, mask_p);
  std::vector<float> tmp;
  for_each_array(m, [&](std::span<double> arr) {
    const std::size_t at = r.offset();
    tmp.resize(arr.size());
    r.get_array(tmp.data(), tmp.size(), "parameters");
    for (std::size_t n = 0; n < arr.size(); ++n) {
      if (!std::isfinite(tmp[n])) {
        throw FormatError("non-finite parameter", at + 4 * n);
      }
      arr[n] = tmp[n];
    }
  });
  r.expect_end();
  return m;
}

void save_checkpoint(const CrosscoderModel& m, const std::filesystem::path& path) {
  detail::ByteWriter w;
  const auto bytes = serialize_checkpoint(m);
  w.put_array(bytes.data(), bytes.size());
  w.save(path);
}

CrosscoderModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

CrosscoderModel round_to_f32(const CrosscoderModel& m) {
  CrosscoderModel out = m;
  for_each_array(out, [](std::span<double> arr) {
    for (auto& v : arr) v = static_cast<float>(v);
  });
  out.mask_p = static_cast<float>(m.mask_p);
  return out;
}

}  // namespace fmx
