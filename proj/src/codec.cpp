// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/codec.hpp"

#include <algorithm>
#include <bit>
#include <cfenv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "kdn/checksum.hpp"
#include "kdn/error.hpp"

namespace kdn {
namespace {

constexpr std::uint64_t kMaxUncompressed = std::uint64_t{1} << 30;
constexpr std::size_t kMaxVarintBytes = 10;

std::uint64_t code_mask(unsigned bits) {
  return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
}

// Number of (layer, head, channel) runs per tensor.
std::size_t n_channels(const CacheGeometry& g) { return g.elements_per_token(); }

void quantize_tensor(const KvCache& cache, bool values, const CodecProfile& p,
                     QuantizedTensor& out) {
  const auto& g = cache.geometry();
  const std::size_t n = cache.n_tokens();
  const std::size_t groups = (n + p.group_size - 1) / p.group_size;
  out.codes.resize(n_channels(g) * n);
  if (p.quant_bits != 32) {
    out.scale.resize(n_channels(g) * groups);
    out.zero.resize(n_channels(g) * groups);
  }
  const double levels = static_cast<double>(code_mask(p.quant_bits));

  std::size_t run = 0;
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t h = 0; h < g.n_heads; ++h) {
      for (std::size_t c = 0; c < g.d_head; ++c, ++run) {
        auto at = [&](std::size_t t) {
          return values ? cache.v(l, h, t)[c] : cache.k(l, h, t)[c];
        };
        std::uint32_t* codes = out.codes.data() + run * n;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t t0 = gi * p.group_size;
          const std::size_t t1 = std::min(n, t0 + p.group_size);
          float lo = std::numeric_limits<float>::infinity();
          float hi = -std::numeric_limits<float>::infinity();
          for (std::size_t t = t0; t < t1; ++t) {
            const float x = at(t);
            if (!std::isfinite(x)) {
              throw Error(ErrorCode::kNonFinite,
                          "non-finite cache value at layer " + std::to_string(l) + " head " +
                              std::to_string(h) + " token " + std::to_string(t));
            }
            lo = std::min(lo, x);
            hi = std::max(hi, x);
          }
          if (p.quant_bits == 32) {
            for (std::size_t t = t0; t < t1; ++t) codes[t] = std::bit_cast<std::uint32_t>(at(t));
            continue;
          }
          float scale = static_cast<float>((static_cast<double>(hi) - lo) / levels);
          if (hi == lo || !(scale > 0.0f)) scale = 1.0f;
          out.scale[run * groups + gi] = scale;
          out.zero[run * groups + gi] = lo;
          for (std::size_t t = t0; t < t1; ++t) {
            const double r = std::nearbyint((static_cast<double>(at(t)) - lo) / scale);
            codes[t] = static_cast<std::uint32_t>(std::clamp(r, 0.0, levels));
          }
        }
      }
    }
  }
}

void dequantize_tensor(const QuantizedCache& q, const QuantizedTensor& in, bool values,
                       KvCache& out) {
  const auto& g = q.geometry;
  const std::size_t n = q.n_tokens;
  const std::size_t groups = q.n_groups();
  std::size_t run = 0;
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t h = 0; h < g.n_heads; ++h) {
      for (std::size_t c = 0; c < g.d_head; ++c, ++run) {
        const std::uint32_t* codes = in.codes.data() + run * n;
        for (std::size_t t = 0; t < n; ++t) {
          float x;
          if (q.quant_bits == 32) {
            x = std::bit_cast<float>(codes[t]);
          } else {
            const std::size_t gi = run * groups + t / q.group_size;
            x = static_cast<float>(static_cast<double>(in.zero[gi]) +
                                   static_cast<double>(codes[t]) * in.scale[gi]);
          }
          (values ? out.v(l, h, t) : out.k(l, h, t))[c] = x;
        }
      }
    }
  }
}

std::int64_t wrap_signed(std::int64_t d, unsigned bits) {
  const std::int64_t span = std::int64_t{1} << bits;
  const std::int64_t half = span / 2;
  d = ((d % span) + span) % span;
  return d >= half ? d - span : d;
}

void pack_bits(Bytes& out, std::span<const std::int64_t> ints, unsigned bits) {
  const std::uint64_t mask = code_mask(bits);
  std::uint64_t acc = 0;
  unsigned filled = 0;
  for (auto v : ints) {
    acc |= (static_cast<std::uint64_t>(v) & mask) << filled;
    filled += bits;
    while (filled >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc));
}

std::vector<std::int64_t> unpack_bits(ByteView bytes, std::size_t count, unsigned bits,
                                      std::size_t base_offset) {
  const std::size_t need = (count * bits + 7) / 8;
  if (bytes.size() != need) {
    throw Error(ErrorCode::kCorrupt,
                "raw stream holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(need),
                base_offset + std::min(bytes.size(), need));
  }
  std::vector<std::int64_t> out;
  out.reserve(count);
  const std::uint64_t mask = code_mask(bits);
  std::uint64_t acc = 0;
  unsigned filled = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    while (filled < bits) {
      acc |= static_cast<std::uint64_t>(bytes[pos++]) << filled;
      filled += 8;
    }
    out.push_back(static_cast<std::int64_t>(acc & mask));
    acc >>= bits;
    filled -= bits;
  }
  return out;
}

std::vector<std::int64_t> decode_varints(ByteView bytes, std::size_t count,
                                         std::size_t base_offset) {
  if (count > bytes.size()) {
    throw Error(ErrorCode::kCorrupt,
                "varint stream too short for " + std::to_string(count) + " values",
                base_offset + bytes.size());
  }
  std::vector<std::int64_t> out;
  out.reserve(count);
  std::size_t pos = 0;
  while (out.size() < count) {
    const std::size_t start = pos;
    std::uint64_t v = 0;
    unsigned shift = 0;
    while (true) {
      if (pos >= bytes.size()) {
        throw Error(ErrorCode::kCorrupt, "truncated varint", base_offset + start);
      }
      const std::uint8_t b = bytes[pos++];
      if (pos - start > kMaxVarintBytes || (shift == 63 && (b & 0x7E) != 0)) {
        throw Error(ErrorCode::kCorrupt, "varint overflows 64 bits", base_offset + start);
      }
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if ((b & 0x80) == 0) break;
      shift += 7;
    }
    out.push_back(zigzag_decode(v));
  }
  if (pos != bytes.size()) {
    throw Error(ErrorCode::kCorrupt, "trailing bytes after varint stream", base_offset + pos);
  }
  return out;
}

std::size_t metadata_bytes(const CacheGeometry& g, std::size_t n_tokens, const CodecProfile& p) {
  if (p.quant_bits == 32) return 0;
  const std::size_t groups = (n_tokens + p.group_size - 1) / p.group_size;
  return 2 * n_channels(g) * groups * 8;
}

void put_metadata(Bytes& out, const QuantizedTensor& t) {
  ByteWriter w(out);
  for (std::size_t i = 0; i < t.scale.size(); ++i) {
    w.put_f32(t.scale[i]);
    w.put_f32(t.zero[i]);
  }
}

void get_metadata(ByteReader& r, std::size_t n, QuantizedTensor& t) {
  t.scale.resize(n);
  t.zero.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.scale[i] = r.get_f32();
    t.zero[i] = r.get_f32();
    if (!std::isfinite(t.scale[i]) || !std::isfinite(t.zero[i])) {
      throw Error(ErrorCode::kCorrupt, "non-finite quantization parameter", r.offset() - 8);
    }
  }
}

// Elements per tensor, checked against overflow and the uncompressed size cap.
std::size_t checked_elements(const CacheGeometry& g, std::uint64_t n_tokens) {
  std::uint64_t e = 1;
  for (std::uint64_t f : {std::uint64_t{g.n_layers}, std::uint64_t{g.n_heads},
                          std::uint64_t{g.d_head}, n_tokens}) {
    if (f != 0 && e > kMaxUncompressed / f) {
      throw Error(ErrorCode::kCorrupt, "chunk geometry too large");
    }
    e *= f;
  }
  if (e * 8 > kMaxUncompressed) throw Error(ErrorCode::kCorrupt, "chunk geometry too large");
  return static_cast<std::size_t>(e);
}

}  // namespace

void CodecProfile::validate() const {
  if (quant_bits != 4 && quant_bits != 8 && quant_bits != 32) {
    throw Error(ErrorCode::kUnknownCodec,
                "unsupported quant_bits " + std::to_string(quant_bits) + " (expected 4, 8 or 32)");
  }
  if (static_cast<std::uint8_t>(lossless) > 2) {
    throw Error(ErrorCode::kUnknownCodec,
                "unknown lossless id " + std::to_string(static_cast<int>(lossless)));
  }
  if (group_size == 0) throw Error(ErrorCode::kInvalidArgument, "group_size must be >= 1");
  if (anchor_stride == 0) throw Error(ErrorCode::kInvalidArgument, "anchor_stride must be >= 1");
}

std::string CodecProfile::describe() const {
  std::ostringstream os;
  os << "bits=" << int(quant_bits) << ",group=" << group_size << ",stride=" << anchor_stride
     << ",lossless=" << int(static_cast<std::uint8_t>(lossless));
  return os.str();
}

CodecProfile parse_profile(std::string_view spec) {
  static const std::map<std::string, CodecProfile, std::less<>> kPresets = {
      {"raw", {32, 16, 1, LosslessId::kRaw}},
      {"q8-raw", {8, 16, 16, LosslessId::kRaw}},
      {"q8-varint", {8, 16, 16, LosslessId::kVarint}},
      {"q8-deflate", {8, 16, 16, LosslessId::kDeflate}},
      {"q4-raw", {4, 16, 16, LosslessId::kRaw}},
      {"q4-varint", {4, 16, 16, LosslessId::kVarint}},
      {"q4-deflate", {4, 16, 16, LosslessId::kDeflate}},
      {"q8-raw-wide", {8, 1024, 16, LosslessId::kRaw}},
  };
  if (auto it = kPresets.find(spec); it != kPresets.end()) return it->second;
  if (spec.find('=') == std::string_view::npos) {
    throw Error(ErrorCode::kUnknownCodec, "unknown codec profile '" + std::string(spec) + "'");
  }

  CodecProfile p;
  std::string s(spec);
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kUnknownCodec, "malformed profile item '" + item + "'");
    }
    const auto name = item.substr(0, eq);
    unsigned long value = 0;
    try {
      std::size_t used = 0;
      value = std::stoul(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kUnknownCodec, "malformed profile value in '" + item + "'");
    }
    if (value > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorCode::kUnknownCodec, "profile value out of range in '" + item + "'");
    }
    if (name == "bits") {
      p.quant_bits = static_cast<std::uint8_t>(std::min(value, 255ul));
    } else if (name == "group") {
      p.group_size = static_cast<std::uint32_t>(value);
    } else if (name == "stride") {
      p.anchor_stride = static_cast<std::uint32_t>(value);
    } else if (name == "lossless") {
      p.lossless = static_cast<LosslessId>(std::min(value, 255ul));
    } else {
      throw Error(ErrorCode::kUnknownCodec, "unknown profile field '" + name + "'");
    }
  }
  p.validate();
  return p;
}

QuantizedCache quantize(const KvCache& cache, const CodecProfile& profile) {
  profile.validate();
  QuantizedCache q;
  q.geometry = cache.geometry();
  q.n_tokens = cache.n_tokens();
  q.start_pos = cache.start_pos();
  q.quant_bits = profile.quant_bits;
  q.group_size = profile.group_size;
  quantize_tensor(cache, false, profile, q.k);
  quantize_tensor(cache, true, profile, q.v);
  return q;
}

KvCache dequantize(const QuantizedCache& q) {
  KvCache out(q.geometry, q.n_tokens, q.start_pos);
  dequantize_tensor(q, q.k, false, out);
  dequantize_tensor(q, q.v, true, out);
  return out;
}

std::vector<std::int64_t> delta_encode(const QuantizedCache& q, std::uint32_t anchor_stride) {
  if (anchor_stride == 0) throw Error(ErrorCode::kInvalidArgument, "anchor_stride must be >= 1");
  const std::size_t n = q.n_tokens;
  std::vector<std::int64_t> out;
  out.reserve(q.k.codes.size() + q.v.codes.size());
  const std::size_t runs = n_channels(q.geometry);
  if (q.k.codes.size() != runs * n || q.v.codes.size() != runs * n) {
    throw Error(ErrorCode::kGeometryMismatch, "code arrays do not match cache geometry");
  }
  for (const auto* t : {&q.k, &q.v}) {
    for (std::size_t run = 0; run < runs; ++run) {
      const std::uint32_t* codes = t->codes.data() + run * n;
      for (std::size_t i = 0; i < n; ++i) {
        if (i % anchor_stride == 0) {
          out.push_back(codes[i]);
        } else {
          out.push_back(wrap_signed(static_cast<std::int64_t>(codes[i]) - codes[i - 1],
                                    q.quant_bits));
        }
      }
    }
  }
  return out;
}

void delta_decode(std::span<const std::int64_t> stream, std::uint32_t anchor_stride,
                  QuantizedCache& q) {
  if (anchor_stride == 0) throw Error(ErrorCode::kInvalidArgument, "anchor_stride must be >= 1");
  const std::size_t n = q.n_tokens;
  const std::size_t per_tensor = n_channels(q.geometry) * n;
  if (stream.size() != 2 * per_tensor) {
    throw Error(ErrorCode::kCorrupt, "delta stream holds " + std::to_string(stream.size()) +
                                         " values, expected " + std::to_string(2 * per_tensor));
  }
  const std::uint64_t mask = code_mask(q.quant_bits);
  std::size_t at = 0;
  for (auto* t : {&q.k, &q.v}) {
    t->codes.resize(per_tensor);
    for (std::size_t run = 0; run < n_channels(q.geometry); ++run) {
      std::uint32_t* codes = t->codes.data() + run * n;
      for (std::size_t i = 0; i < n; ++i, ++at) {
        const auto d = static_cast<std::uint64_t>(stream[at]);
        const std::uint64_t base = i % anchor_stride == 0 ? 0 : codes[i - 1];
        codes[i] = static_cast<std::uint32_t>((base + d) & mask);
      }
    }
  }
}

std::uint64_t zigzag_encode(std::int64_t v) {
  return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}

std::int64_t zigzag_decode(std::uint64_t v) {
  return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
}

void put_varint(Bytes& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

Bytes lossless_encode(std::span<const std::int64_t> ints, LosslessId id, unsigned raw_bits) {
  Bytes out;
  switch (id) {
    case LosslessId::kRaw:
      if (raw_bits == 0 || raw_bits > 64) {
        throw Error(ErrorCode::kInvalidArgument, "raw width must be 1..64 bits");
      }
      pack_bits(out, ints, raw_bits);
      return out;
    case LosslessId::kVarint:
      for (auto v : ints) put_varint(out, zigzag_encode(v));
      return out;
    case LosslessId::kDeflate:
      return deflate_raw(lossless_encode(ints, LosslessId::kVarint));
  }
  throw Error(ErrorCode::kUnknownCodec,
              "unknown lossless id " + std::to_string(static_cast<int>(id)));
}

std::vector<std::int64_t> lossless_decode(ByteView bytes, LosslessId id, std::size_t count,
                                          unsigned raw_bits) {
  switch (id) {
    case LosslessId::kRaw:
      if (raw_bits == 0 || raw_bits > 64) {
        throw Error(ErrorCode::kInvalidArgument, "raw width must be 1..64 bits");
      }
      return unpack_bits(bytes, count, raw_bits, 0);
    case LosslessId::kVarint:
      return decode_varints(bytes, count, 0);
    case LosslessId::kDeflate: {
      const auto varints = inflate_raw(bytes, count * kMaxVarintBytes);
      return decode_varints(varints, count, 0);
    }
  }
  throw Error(ErrorCode::kUnknownCodec,
              "unknown lossless id " + std::to_string(static_cast<int>(id)));
}

KvCache filter_tokens(const KvCache& cache, std::span<const bool> keep) {
  if (keep.size() != cache.n_tokens()) {
    throw Error(ErrorCode::kGeometryMismatch, "keep-mask length does not match token count");
  }
  std::vector<KvCache> rows;
  for (std::size_t t = 0; t < keep.size(); ++t) {
    if (keep[t]) rows.push_back(cache.slice(t, t + 1));
  }
  if (rows.empty()) return KvCache(cache.geometry(), 0, cache.start_pos());
  auto out = KvCache::concat(rows);
  out.set_start_pos(cache.start_pos());
  return out;
}

CompressedChunk compress_cache(const KvCache& cache, const CodecProfile& profile,
                               const ChunkKey& key) {
  profile.validate();
  if (cache.n_tokens() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kOutOfRange, "chunk token count exceeds u32");
  }
  const auto q = quantize(cache, profile);
  const auto stream = delta_encode(q, profile.anchor_stride);

  Bytes body;
  put_metadata(body, q.k);
  put_metadata(body, q.v);

  CompressedChunk chunk;
  chunk.key = key;
  chunk.profile = profile;
  chunk.geometry = cache.geometry();
  chunk.n_tokens = static_cast<std::uint32_t>(cache.n_tokens());
  chunk.start_pos = cache.start_pos();
  chunk.uncompressed_len = static_cast<std::uint64_t>(cache.keys().size()) * 4 * 2;

  if (profile.lossless == LosslessId::kDeflate) {
    // Metadata and codes share one DEFLATE stream.
    for (auto v : stream) put_varint(body, zigzag_encode(v));
    chunk.payload = deflate_raw(body);
  } else {
    const auto codes = lossless_encode(stream, profile.lossless, profile.quant_bits);
    body.insert(body.end(), codes.begin(), codes.end());
    chunk.payload = std::move(body);
  }
  chunk.crc32c = kdn::crc32c(chunk.payload);
  return chunk;
}

KvCache decompress_cache(const CompressedChunk& chunk) {
  chunk.profile.validate();
  const std::size_t elements = checked_elements(chunk.geometry, chunk.n_tokens);
  if (static_cast<std::uint64_t>(elements) * 8 != chunk.uncompressed_len) {
    throw Error(ErrorCode::kGeometryMismatch,
                "uncompressed_len " + std::to_string(chunk.uncompressed_len) +
                    " does not match geometry (" + std::to_string(elements * 8) + " bytes)");
  }
  if (kdn::crc32c(chunk.payload) != chunk.crc32c) {
    throw Error(ErrorCode::kChecksumMismatch, "chunk payload crc32c mismatch");
  }

  QuantizedCache q;
  q.geometry = chunk.geometry;
  q.n_tokens = chunk.n_tokens;
  q.start_pos = chunk.start_pos;
  q.quant_bits = chunk.profile.quant_bits;
  q.group_size = chunk.profile.group_size;
  const std::size_t meta = metadata_bytes(chunk.geometry, chunk.n_tokens, chunk.profile);
  const std::size_t count = 2 * elements;

  Bytes inflated;
  ByteView body = chunk.payload;
  if (chunk.profile.lossless == LosslessId::kDeflate) {
    inflated = inflate_raw(chunk.payload, meta + count * kMaxVarintBytes);
    body = inflated;
  }
  if (body.size() < meta) {
    throw Error(ErrorCode::kCorrupt, "payload shorter than quantization metadata", body.size());
  }
  ByteReader r(body.first(meta));
  get_metadata(r, meta / 16, q.k);
  get_metadata(r, meta / 16, q.v);

  const auto codes = body.subspan(meta);
  std::vector<std::int64_t> stream;
  switch (chunk.profile.lossless) {
    case LosslessId::kRaw:
      stream = unpack_bits(codes, count, q.quant_bits, meta);
      break;
    case LosslessId::kVarint:
    case LosslessId::kDeflate:
      stream = decode_varints(codes, count, meta);
      break;
  }
  delta_decode(stream, chunk.profile.anchor_stride, q);
  return dequantize(q);
}

Bytes serialize_chunk(const CompressedChunk& c) {
  Bytes out;
  out.reserve(kChunkHeaderSize + c.payload.size() + 4);
  ByteWriter w(out);
  w.put_str("KDNC");
  w.put(kChunkVersion);
  w.put(static_cast<std::uint8_t>(c.key.mode));
  w.put_bytes(c.key.digest);
  w.put(c.profile.quant_bits);
  w.put(static_cast<std::uint8_t>(c.profile.lossless));
  w.put(c.profile.group_size);
  w.put(c.profile.anchor_stride);
  w.put(c.geometry.n_layers);
  w.put(c.geometry.n_heads);
  w.put(c.geometry.d_head);
  w.put(c.n_tokens);
  w.put(c.start_pos);
  w.put(c.uncompressed_len);
  w.put(static_cast<std::uint64_t>(c.payload.size()));
  w.put_bytes(c.payload);
  w.put(c.crc32c);
  return out;
}

CompressedChunk parse_chunk(ByteView bytes) {
  ByteReader r(bytes);
  r.expect_magic("KDNC");
  const auto version = r.get<std::uint8_t>();
  if (version != kChunkVersion) {
    throw Error(ErrorCode::kCorrupt, "unsupported chunk version " + std::to_string(version), 4);
  }
  CompressedChunk c;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw Error(ErrorCode::kCorrupt, "bad key mode", r.offset() - 1);
  c.key.mode = static_cast<KeyMode>(mode);
  auto digest = r.get_bytes(32);
  std::copy(digest.begin(), digest.end(), c.key.digest.begin());
  c.profile.quant_bits = r.get<std::uint8_t>();
  c.profile.lossless = static_cast<LosslessId>(r.get<std::uint8_t>());
  c.profile.group_size = r.get<std::uint32_t>();
  c.profile.anchor_stride = r.get<std::uint32_t>();
  try {
    c.profile.validate();
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), 38);
  }
  c.geometry.n_layers = r.get<std::uint32_t>();
  c.geometry.n_heads = r.get<std::uint32_t>();
  c.geometry.d_head = r.get<std::uint32_t>();
  if (c.geometry.n_layers == 0 || c.geometry.n_heads == 0 || c.geometry.d_head == 0) {
    throw Error(ErrorCode::kCorrupt, "zero cache dimension", r.offset() - 12);
  }
  c.n_tokens = r.get<std::uint32_t>();
  c.start_pos = r.get<std::uint64_t>();
  c.uncompressed_len = r.get<std::uint64_t>();
  const std::size_t elements = checked_elements(c.geometry, c.n_tokens);
  if (static_cast<std::uint64_t>(elements) * 8 != c.uncompressed_len) {
    throw Error(ErrorCode::kCorrupt, "uncompressed_len does not match geometry", r.offset() - 8);
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len > r.remaining()) {
    throw Error(ErrorCode::kCorrupt, "payload_len exceeds input", r.offset() - 8);
  }
  auto payload = r.get_bytes(static_cast<std::size_t>(payload_len));
  c.payload.assign(payload.begin(), payload.end());
  c.crc32c = r.get<std::uint32_t>();
  if (!r.done()) throw Error(ErrorCode::kCorrupt, "trailing bytes after chunk", r.offset());
  if (kdn::crc32c(c.payload) != c.crc32c) {
    throw Error(ErrorCode::kChecksumMismatch, "chunk payload crc32c mismatch", r.offset() - 4);
  }
  return c;
}

double compression_ratio(const CompressedChunk& chunk) {
  const double stored = static_cast<double>(kChunkHeaderSize + chunk.payload.size() + 4);
  return static_cast<double>(chunk.uncompressed_len) / stored;
}

}  // namespace kdn
