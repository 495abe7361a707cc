// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <openssl/evp.h>

#include "kdn/bytes.hpp"
#include "kdn/checksum.hpp"
#include "kdn/error.hpp"

namespace kdn {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kOutOfRange: return "out of range";
    case ErrorCode::kGeometryMismatch: return "geometry mismatch";
    case ErrorCode::kCorrupt: return "corrupt data";
    case ErrorCode::kChecksumMismatch: return "checksum mismatch";
    case ErrorCode::kUnknownCodec: return "unknown codec";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kCapacity: return "capacity exceeded";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kProtocol: return "protocol error";
    case ErrorCode::kBrokenChain: return "broken chain";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message, std::size_t offset)
    : std::runtime_error(offset == kNoOffset
                             ? message
                             : message + " (at byte " + std::to_string(offset) + ")"),
      code_(code),
      offset_(offset) {}

std::string to_hex(ByteView bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::kInvalidArgument, "non-hex character in '" + std::string(hex) + "'");
  };
  if (hex.size() % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "odd-length hex string");
  }
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

Sha256Digest sha256(ByteView data) {
  Sha256Digest digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != digest.size()) {
    throw Error(ErrorCode::kIo, "SHA-256 computation failed");
  }
  return digest;
}

}  // namespace kdn
