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

// Little-endian byte buffers shared by the cache and checkpoint formats.
// Internal to the library.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "fmx/errors.hpp"

namespace fmx::detail {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; add byte swapping for this target");

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
  void put_array(const T* data, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n * sizeof(T));
  }

  const std::vector<char>& buffer() const { return buf_; }

  // Writes to `path` through a temporary sibling and a rename, so readers
  // never see a half-written file.
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

// Whole-file read. Throws DataError when the file cannot be opened.
std::vector<char> read_file(const std::filesystem::path& path);

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw FormatError("bad magic, expected '" + std::string(magic) + "'", pos_);
    }
    pos_ += magic.size();
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
  void get_array(T* out, std::size_t n, const char* what) {
    need(n * sizeof(T), what);
    std::memcpy(out, data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
  }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left",
                        pos_);
    }
  }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(std::to_string(remaining()) + " trailing bytes after payload", pos_);
    }
  }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace fmx::detail
