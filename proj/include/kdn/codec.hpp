// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdn/bytes.hpp"
#include "kdn/chunk_key.hpp"
#include "kdn/model.hpp"

namespace kdn {

enum class LosslessId : std::uint8_t { kRaw = 0, kVarint = 1, kDeflate = 2 };

// quant_bits 4 or 8 selects affine quantization; 32 is an f32 passthrough
// (codes are the IEEE bit patterns, no scales).
struct CodecProfile {
  std::uint8_t quant_bits = 8;
  std::uint32_t group_size = 16;
  std::uint32_t anchor_stride = 16;
  LosslessId lossless = LosslessId::kDeflate;

  void validate() const;
  std::string describe() const;
  bool operator==(const CodecProfile&) const = default;
};

// Named presets ("raw", "q8-raw", "q8-varint", "q8-deflate", "q4-deflate", ...,
// "q8-raw-wide" with 1024-token groups)
// or an explicit "bits=4,group=16,stride=16,lossless=2". Unknown names throw
// kUnknownCodec.
CodecProfile parse_profile(std::string_view spec);

// Codes for one tensor (K or V) are laid out (layer, head, channel, token) so
// each channel's token run is contiguous. Affine parameters are indexed
// (layer, head, channel, group).
struct QuantizedTensor {
  std::vector<float> scale;
  std::vector<float> zero;
  std::vector<std::uint32_t> codes;
};

struct QuantizedCache {
  CacheGeometry geometry;
  std::size_t n_tokens = 0;
  std::uint64_t start_pos = 0;
  std::uint8_t quant_bits = 8;
  std::uint32_t group_size = 16;
  QuantizedTensor k;
  QuantizedTensor v;

  std::size_t n_groups() const { return (n_tokens + group_size - 1) / group_size; }
};

QuantizedCache quantize(const KvCache& cache, const CodecProfile& profile);
KvCache dequantize(const QuantizedCache& q);

// Anchor/delta coding over the K codes followed by the V codes, each in
// (layer, head, channel, token) order. Token 0 of every anchor window is
// stored raw; others as the signed difference from the previous token,
// wrapped into [-2^(b-1), 2^(b-1)).
std::vector<std::int64_t> delta_encode(const QuantizedCache& q, std::uint32_t anchor_stride);
// Restores q.k.codes / q.v.codes; geometry, bits and n_tokens must be set.
void delta_decode(std::span<const std::int64_t> stream, std::uint32_t anchor_stride,
                  QuantizedCache& q);

std::uint64_t zigzag_encode(std::int64_t v);
std::int64_t zigzag_decode(std::uint64_t v);
void put_varint(Bytes& out, std::uint64_t v);

// kRaw packs each value's low raw_bits bits LSB-first; kVarint is zigzag +
// LEB128; kDeflate is the kVarint output through raw DEFLATE (RFC 1951).
Bytes lossless_encode(std::span<const std::int64_t> ints, LosslessId id, unsigned raw_bits = 32);
// Decodes exactly `count` values; malformed input throws kCorrupt with the
// byte offset. kRaw yields the unsigned raw_bits-wide values.
std::vector<std::int64_t> lossless_decode(ByteView bytes, LosslessId id, std::size_t count,
                                          unsigned raw_bits = 32);

Bytes deflate_raw(ByteView data);
// Fails if the output would exceed max_output bytes.
Bytes inflate_raw(ByteView data, std::size_t max_output);

struct CompressedChunk {
  ChunkKey key;
  CodecProfile profile;
  CacheGeometry geometry;
  std::uint32_t n_tokens = 0;
  std::uint64_t start_pos = 0;
  std::uint64_t uncompressed_len = 0;
  Bytes payload;
  std::uint32_t crc32c = 0;

  bool operator==(const CompressedChunk&) const = default;
};

// Token-drop hook applied before compression: keeps rows whose mask entry is
// true. The selection policy lives with the caller.
KvCache filter_tokens(const KvCache& cache, std::span<const bool> keep);

CompressedChunk compress_cache(const KvCache& cache, const CodecProfile& profile,
                               const ChunkKey& key = {});
// Verifies the checksum and geometry, then decodes. The result equals
// dequantize(quantize(cache)) bit for bit.
KvCache decompress_cache(const CompressedChunk& chunk);

// Binary layout (little-endian):
//   "KDNC" | version u8 | key mode u8 | key digest [32] |
//   quant_bits u8 | lossless_id u8 | group_size u32 | anchor_stride u32 |
//   n_layers u32 | n_heads u32 | d_head u32 | n_tokens u32 | start_pos u64 |
//   uncompressed_len u64 | payload_len u64 | payload | crc32c(payload) u32
inline constexpr std::uint8_t kChunkVersion = 1;
inline constexpr std::size_t kChunkHeaderSize = 88;

Bytes serialize_chunk(const CompressedChunk& chunk);
// Total over arbitrary input: returns a chunk or throws kdn::Error.
CompressedChunk parse_chunk(ByteView bytes);

double compression_ratio(const CompressedChunk& chunk);

}  // namespace kdn
