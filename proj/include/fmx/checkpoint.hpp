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

// "FMXC1" model checkpoints. Layout is documented in docs/formats.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fmx/model.hpp"

namespace fmx {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Parameters are narrowed to f32 on write.
std::vector<char> serialize_checkpoint(const CrosscoderModel& m);
CrosscoderModel deserialize_checkpoint(std::vector<char> bytes);

void save_checkpoint(const CrosscoderModel& m, const std::filesystem::path& path);
// Throws FormatError (with byte offset) on any malformed input.
CrosscoderModel load_checkpoint(const std::filesystem::path& path);

// The model with every parameter rounded through f32, i.e. what a
// save/load cycle returns.
CrosscoderModel round_to_f32(const CrosscoderModel& m);

}  // namespace fmx
