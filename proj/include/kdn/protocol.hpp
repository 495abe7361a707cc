// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdn/bytes.hpp"
#include "kdn/chunk_key.hpp"
#include "kdn/model.hpp"

namespace kdn {

// Frame layout, little-endian:
//   "KDN1" | type u8 | payload_len u32 | payload | crc32c(type | payload) u32
enum class FrameType : std::uint8_t {
  kReqKeys = 1,
  kReqTokens = 2,
  kChunk = 3,
  kEnd = 4,
  kErr = 5,
};

const char* to_string(FrameType type);

inline constexpr std::uint32_t kMaxFramePayload = 64u << 20;
inline constexpr std::size_t kFrameHeaderSize = 9;
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;

struct Frame {
  FrameType type = FrameType::kEnd;
  Bytes payload;

  bool operator==(const Frame&) const = default;
};

// Codes carried in ERR frames.
enum class WireError : std::uint16_t {
  kBadMagic = 1,
  kBadCrc = 2,
  kOversize = 3,
  kMalformedRequest = 4,
  kUnknownType = 5,
  kInternal = 6,
};

const char* to_string(WireError code);

Bytes encode_frame(const Frame& frame);

enum class DecodeStatus { kOk, kIncomplete, kError };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::kIncomplete;
  Frame frame;                // valid for kOk
  std::size_t consumed = 0;   // bytes to drop; 0 for kIncomplete
  WireError error = WireError::kInternal;  // valid for kError
  std::string message;
};

// Decodes one frame from the front of `data`. On kError, `consumed` skips to
// the next possible magic so the caller can resynchronize.
DecodeResult decode_frame(ByteView data);

// Incremental decoder over a byte stream.
class FrameDecoder {
 public:
  void feed(ByteView data);
  // Next complete frame or error; nullopt when more bytes are needed.
  std::optional<DecodeResult> next();
  std::size_t buffered() const { return buf_.size() - head_; }

 private:
  Bytes buf_;
  std::size_t head_ = 0;
};

struct TokensRequest {
  std::uint64_t model_id = 0;
  KeyMode mode = KeyMode::kChain;
  TokenSeq tokens;

  bool operator==(const TokensRequest&) const = default;
};

struct KeysRequest {
  std::vector<ChunkKey> keys;

  bool operator==(const KeysRequest&) const = default;
};

// END payload: n u32 | tokens u32 x n | m u32 | (mode u8 | digest) x m
struct EndMessage {
  TokenSeq miss_suffix;
  std::vector<ChunkKey> missing_keys;

  bool operator==(const EndMessage&) const = default;
};

// ERR payload: code u16 | UTF-8 message (rest of payload)
struct ErrMessage {
  std::uint16_t code = 0;
  std::string message;

  bool operator==(const ErrMessage&) const = default;
};

// Payload codecs. Decoders throw kProtocol on malformed payloads.
Frame make_frame(const TokensRequest& m);
Frame make_frame(const KeysRequest& m);
Frame make_frame(const EndMessage& m);
Frame make_frame(const ErrMessage& m);

TokensRequest parse_tokens_request(ByteView payload);
KeysRequest parse_keys_request(ByteView payload);
EndMessage parse_end(ByteView payload);
ErrMessage parse_err(ByteView payload);

}  // namespace kdn
