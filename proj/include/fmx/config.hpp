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

// Flat "section.key = value" run configuration. Every key has a registered
// default; files and --key value overrides may only set registered keys.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace fmx {

class Config {
 public:
  // All registered keys at their defaults.
  Config();

  // Lines of "key = value"; '#' starts a comment. Throws ConfigError naming
  // the key (or line) on unknown keys and malformed lines.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "config");
  void set(const std::string& key, const std::string& value);

  const std::string& raw(const std::string& key) const;
  std::string str(const std::string& key) const { return raw(key); }
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;  // comma-separated

  bool is_set(const std::string& key) const { return !raw(key).empty(); }

  // Every key, sorted, as "key = value" lines: loadable by load_file.
  void write(std::ostream& out) const;
  void write_file(const std::filesystem::path& path) const;

  static bool known(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fmx
