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

// Command-line entry points. run_cli is the whole program minus process
// setup, so tests can drive it in-process.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fmx {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;     // data, format, dimension and index errors
inline constexpr int kExitRuntime = 4;  // training divergence and anything unexpected

// args excludes the program name: {"train", "--config", "run.cfg", ...}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmx
