// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kdn/error.hpp"

namespace kdn {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(ByteView bytes);
// Throws kInvalidArgument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

// Little-endian append-only writer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename T>
    requires std::is_integral_v<T>
  void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  }

  void put_f32(float value) { put(std::bit_cast<std::uint32_t>(value)); }
  void put_f64(double value) { put(std::bit_cast<std::uint64_t>(value)); }
  void put_bytes(ByteView bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  void put_str(std::string_view s) { put_bytes(as_bytes(s)); }

  std::size_t size() const { return out_.size(); }

 private:
  Bytes& out_;
};

// Little-endian bounds-checked reader. Every read past the end throws
// kdn::Error{kCorrupt} carrying the offset of the failed read.
class ByteReader {
 public:
  explicit ByteReader(ByteView data, std::size_t base_offset = 0)
      : data_(data), base_(base_offset) {}

  template <typename T>
    requires std::is_integral_v<T>
  T get() {
    require(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  ByteView get_bytes(std::size_t n) {
    require(n);
    auto view = data_.subspan(pos_, n);
    pos_ += n;
    return view;
  }

  void expect_magic(std::string_view magic) {
    auto got = get_bytes(magic.size());
    if (std::memcmp(got.data(), magic.data(), magic.size()) != 0) {
      throw Error(ErrorCode::kCorrupt, "bad magic, expected '" + std::string(magic) + "'",
                  offset() - magic.size());
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  std::size_t offset() const { return base_ + pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void require(std::size_t n) const {
    if (n > remaining()) {
      throw Error(ErrorCode::kCorrupt,
                  "truncated input: need " + std::to_string(n) + " bytes, have " +
                      std::to_string(remaining()),
                  offset());
    }
  }

  ByteView data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace kdn
