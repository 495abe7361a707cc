// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "kdn/checksum.hpp"
#include "kdn/model.hpp"

namespace kdn {

enum class KeyMode : std::uint8_t { kChain = 0, kStandalone = 1 };

const char* to_string(KeyMode mode);
// Accepts "chain" / "standalone".
KeyMode parse_key_mode(std::string_view name);

// 256-bit content address of a token chunk. Chain keys commit to the whole
// prefix through the parent digest; standalone keys depend only on
// (model_id, chunk tokens).
struct ChunkKey {
  Sha256Digest digest{};
  KeyMode mode = KeyMode::kChain;

  std::string hex() const { return to_hex(digest); }
  static ChunkKey from_hex(std::string_view hex, KeyMode mode);

  auto operator<=>(const ChunkKey&) const = default;
};

// SHA-256 over "KDNKEY1" | mode u8 | parent digest (32 zero bytes if none) |
// model_id u64 | n u32 | tokens u32... (all little-endian). Standalone keys
// ignore `parent`.
ChunkKey make_key(std::uint64_t model_id, KeyMode mode, const std::optional<ChunkKey>& parent,
                  std::span<const Token> chunk_tokens);

Bytes key_canonical_bytes(std::uint64_t model_id, KeyMode mode,
                          const std::optional<ChunkKey>& parent,
                          std::span<const Token> chunk_tokens);

}  // namespace kdn
