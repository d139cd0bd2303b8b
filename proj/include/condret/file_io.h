// Copyright 2026 the condret authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "condret/error.h"

namespace condret {

static_assert(std::endian::native == std::endian::little,
              "binary containers are stored little-endian");

/// Reads a whole file. Throws kMissingFile if it cannot be opened.
std::string read_file(const std::string& path);

/// Writes to `path + ".tmp"` and renames over `path`.
void write_file_atomic(const std::string& path, std::string_view contents);

/// Append-only byte buffer for the binary containers.
class ByteWriter {
 public:
  template <typename T>
  void put(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buffer_.append(p, sizeof(T));
  }

  template <typename T>
  void put_array(const std::vector<T>& values) {
    static_assert(std::is_trivially_copyable_v<T>);
    put<std::uint64_t>(values.size());
    buffer_.append(reinterpret_cast<const char*>(values.data()),
                   values.size() * sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    buffer_.append(s);
  }

  void put_raw(std::string_view s) { buffer_.append(s); }

  const std::string& bytes() const { return buffer_; }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    check(n <= (bytes_.size() - pos_) / sizeof(T), ErrorKind::kParse,
          "array length exceeds remaining bytes");
    std::vector<T> values(n);
    std::memcpy(values.data(), bytes_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return values;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void expect_raw(std::string_view magic) {
    need(magic.size());
    check(bytes_.substr(pos_, magic.size()) == magic, ErrorKind::kParse,
          "bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    check(n <= bytes_.size() - pos_, ErrorKind::kParse, "unexpected end of file");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace condret
