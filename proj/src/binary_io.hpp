// Copyright 2026 The MCEP Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Little-endian primitives shared by the checkpoint and dataset codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mcep/common.hpp"

namespace mcep::detail {

template <typename UInt>
void put_le(std::string& buf, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline void put_u32(std::string& buf, std::uint32_t v) { put_le(buf, v); }
inline void put_f64(std::string& buf, double v) { put_le(buf, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::string& buf, float v) { put_le(buf, std::bit_cast<std::uint32_t>(v)); }

/// Bounds-checked reader over an in-memory byte buffer.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::size_t end, const char* what)
      : data_(data), end_(end), what_(what) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n) const {
    if (end_ - pos_ < n) {
      throw DataError(DataError::Kind::Truncated, std::string(what_) + " is truncated");
    }
  }

  template <typename UInt>
  UInt get_le() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
  const char* what_;
};

inline std::string read_all(std::istream& in) {
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

}  // namespace mcep::detail
