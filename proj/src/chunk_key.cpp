// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/chunk_key.hpp"

#include <algorithm>

#include "kdn/error.hpp"

namespace kdn {

const char* to_string(KeyMode mode) {
  return mode == KeyMode::kChain ? "chain" : "standalone";
}

KeyMode parse_key_mode(std::string_view name) {
  if (name == "chain") return KeyMode::kChain;
  if (name == "standalone") return KeyMode::kStandalone;
  throw Error(ErrorCode::kInvalidArgument, "unknown key mode '" + std::string(name) + "'");
}

ChunkKey ChunkKey::from_hex(std::string_view hex, KeyMode mode) {
  auto bytes = kdn::from_hex(hex);
  if (bytes.size() != 32) {
    throw Error(ErrorCode::kInvalidArgument, "chunk key must be 64 hex digits");
  }
  ChunkKey key;
  std::copy(bytes.begin(), bytes.end(), key.digest.begin());
  key.mode = mode;
  return key;
}

Bytes key_canonical_bytes(std::uint64_t model_id, KeyMode mode,
                          const std::optional<ChunkKey>& parent,
                          std::span<const Token> chunk_tokens) {
  Bytes canon;
  ByteWriter w(canon);
  w.put_str("KDNKEY1");
  w.put(static_cast<std::uint8_t>(mode));
  if (mode == KeyMode::kChain && parent) {
    w.put_bytes(parent->digest);
  } else {
    canon.insert(canon.end(), 32, 0);
  }
  w.put(model_id);
  w.put(static_cast<std::uint32_t>(chunk_tokens.size()));
  for (Token t : chunk_tokens) w.put(t);
  return canon;
}

ChunkKey make_key(std::uint64_t model_id, KeyMode mode, const std::optional<ChunkKey>& parent,
                  std::span<const Token> chunk_tokens) {
  ChunkKey key;
  key.mode = mode;
  key.digest = sha256(key_canonical_bytes(model_id, mode, parent, chunk_tokens));
  return key;
}

}  // namespace kdn
