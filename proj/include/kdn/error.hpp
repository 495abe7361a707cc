// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kdn {

enum class ErrorCode : std::uint16_t {
  kInvalidArgument = 1,
  kOutOfRange = 2,
  kGeometryMismatch = 3,
  kCorrupt = 4,
  kChecksumMismatch = 5,
  kUnknownCodec = 6,
  kNonFinite = 7,
  kCapacity = 8,
  kNotFound = 9,
  kIo = 10,
  kProtocol = 11,
  kBrokenChain = 12,
};

const char* to_string(ErrorCode code);

// Every recoverable failure in the library surfaces as kdn::Error. Decoders
// fill in the byte offset at which parsing stopped.
class Error : public std::runtime_error {
 public:
  static constexpr std::size_t kNoOffset = static_cast<std::size_t>(-1);

  Error(ErrorCode code, const std::string& message, std::size_t offset = kNoOffset);

  ErrorCode code() const noexcept { return code_; }
  std::size_t offset() const noexcept { return offset_; }
  bool has_offset() const noexcept { return offset_ != kNoOffset; }

 private:
  ErrorCode code_;
  std::size_t offset_;
};

}  // namespace kdn
