// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/protocol.hpp"

#include <algorithm>
#include <cstring>

#include "kdn/checksum.hpp"
#include "kdn/error.hpp"

namespace kdn {
namespace {

constexpr char kMagic[4] = {'K', 'D', 'N', '1'};

std::uint32_t frame_crc(std::uint8_t type, ByteView payload) {
  Crc32c crc;
  crc.update(ByteView(&type, 1));
  crc.update(payload);
  return crc.value();
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

// Index of the first byte at or after `from` that could begin the magic.
std::size_t resync_point(ByteView data, std::size_t from) {
  for (std::size_t i = from; i < data.size(); ++i) {
    const std::size_t n = std::min<std::size_t>(4, data.size() - i);
    if (std::memcmp(data.data() + i, kMagic, n) == 0) return i;
  }
  return data.size();
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 5; }

KeyMode read_mode(ByteReader& r) {
  const auto at = r.offset();
  const auto m = r.get<std::uint8_t>();
  if (m > 1) throw Error(ErrorCode::kProtocol, "unknown key mode " + std::to_string(m), at);
  return static_cast<KeyMode>(m);
}

ChunkKey read_key(ByteReader& r) {
  ChunkKey key;
  key.mode = read_mode(r);
  const auto d = r.get_bytes(32);
  std::copy(d.begin(), d.end(), key.digest.begin());
  return key;
}

void put_key(ByteWriter& w, const ChunkKey& key) {
  w.put(static_cast<std::uint8_t>(key.mode));
  w.put_bytes(key.digest);
}

// Reads a u32 count and checks `count * item_size` bytes remain.
std::uint32_t read_count(ByteReader& r, std::size_t item_size) {
  const auto at = r.offset();
  const auto n = r.get<std::uint32_t>();
  if (static_cast<std::uint64_t>(n) * item_size > r.remaining()) {
    throw Error(ErrorCode::kProtocol, "count " + std::to_string(n) + " overruns payload", at);
  }
  return n;
}

template <typename F>
auto parse_payload(ByteView payload, const char* what, F&& body) {
  try {
    ByteReader r(payload);
    auto out = body(r);
    if (!r.done()) {
      throw Error(ErrorCode::kProtocol, std::string("trailing bytes in ") + what, r.offset());
    }
    return out;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kProtocol) throw;
    throw Error(ErrorCode::kProtocol, std::string("malformed ") + what + ": " + e.what());
  }
}

}  // namespace

const char* to_string(FrameType type) {
  switch (type) {
    case FrameType::kReqKeys: return "REQ_KEYS";
    case FrameType::kReqTokens: return "REQ_TOKENS";
    case FrameType::kChunk: return "CHUNK";
    case FrameType::kEnd: return "END";
    case FrameType::kErr: return "ERR";
  }
  return "?";
}

const char* to_string(WireError code) {
  switch (code) {
    case WireError::kBadMagic: return "bad magic";
    case WireError::kBadCrc: return "bad crc";
    case WireError::kOversize: return "oversize frame";
    case WireError::kMalformedRequest: return "malformed request";
    case WireError::kUnknownType: return "unknown frame type";
    case WireError::kInternal: return "internal error";
  }
  return "?";
}

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload) {
    throw Error(ErrorCode::kInvalidArgument, "frame payload of " +
                                                 std::to_string(frame.payload.size()) +
                                                 " bytes exceeds the 64 MiB limit");
  }
  Bytes out;
  out.reserve(kFrameOverhead + frame.payload.size());
  ByteWriter w(out);
  w.put_bytes(as_bytes(std::string_view(kMagic, 4)));
  const auto type = static_cast<std::uint8_t>(frame.type);
  w.put(type);
  w.put(static_cast<std::uint32_t>(frame.payload.size()));
  w.put_bytes(frame.payload);
  w.put(frame_crc(type, frame.payload));
  return out;
}

DecodeResult decode_frame(ByteView data) {
  DecodeResult res;
  auto fail = [&](WireError code, std::string msg, std::size_t skip_from) {
    res.status = DecodeStatus::kError;
    res.error = code;
    res.message = std::move(msg);
    res.consumed = std::max<std::size_t>(1, resync_point(data, skip_from));
    return res;
  };

  const std::size_t probe = std::min<std::size_t>(4, data.size());
  if (std::memcmp(data.data(), kMagic, probe) != 0) {
    return fail(WireError::kBadMagic, "bad magic", 1);
  }
  if (data.size() < kFrameHeaderSize) return res;

  const std::uint8_t type = data[4];
  const std::uint32_t len = read_u32(data.data() + 5);
  if (len > kMaxFramePayload) {
    return fail(WireError::kOversize, "payload length " + std::to_string(len) + " exceeds limit", 1);
  }
  const std::size_t total = kFrameOverhead + len;
  if (data.size() < total) return res;

  const auto payload = data.subspan(kFrameHeaderSize, len);
  const std::uint32_t crc = read_u32(data.data() + kFrameHeaderSize + len);
  if (crc != frame_crc(type, payload)) return fail(WireError::kBadCrc, "frame crc mismatch", 1);
  if (!known_type(type)) {
    res.status = DecodeStatus::kError;
    res.error = WireError::kUnknownType;
    res.message = "unknown frame type " + std::to_string(type);
    res.consumed = total;
    return res;
  }
  res.status = DecodeStatus::kOk;
  res.frame.type = static_cast<FrameType>(type);
  res.frame.payload.assign(payload.begin(), payload.end());
  res.consumed = total;
  return res;
}

void FrameDecoder::feed(ByteView data) {
  if (head_ > 0 && head_ >= buf_.size() / 2) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
    head_ = 0;
  }
  buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<DecodeResult> FrameDecoder::next() {
  if (head_ == buf_.size()) return std::nullopt;
  auto res = decode_frame(ByteView(buf_).subspan(head_));
  if (res.status == DecodeStatus::kIncomplete) return std::nullopt;
  head_ += res.consumed;
  return res;
}

Frame make_frame(const TokensRequest& m) {
  Frame f{FrameType::kReqTokens, {}};
  ByteWriter w(f.payload);
  w.put(m.model_id);
  w.put(static_cast<std::uint8_t>(m.mode));
  w.put(static_cast<std::uint32_t>(m.tokens.size()));
  for (auto t : m.tokens) w.put(t);
  return f;
}

Frame make_frame(const KeysRequest& m) {
  Frame f{FrameType::kReqKeys, {}};
  ByteWriter w(f.payload);
  w.put(static_cast<std::uint32_t>(m.keys.size()));
  for (const auto& k : m.keys) put_key(w, k);
  return f;
}

Frame make_frame(const EndMessage& m) {
  Frame f{FrameType::kEnd, {}};
  ByteWriter w(f.payload);
  w.put(static_cast<std::uint32_t>(m.miss_suffix.size()));
  for (auto t : m.miss_suffix) w.put(t);
  w.put(static_cast<std::uint32_t>(m.missing_keys.size()));
  for (const auto& k : m.missing_keys) put_key(w, k);
  return f;
}

Frame make_frame(const ErrMessage& m) {
  Frame f{FrameType::kErr, {}};
  ByteWriter w(f.payload);
  w.put(m.code);
  w.put_str(m.message);
  return f;
}

TokensRequest parse_tokens_request(ByteView payload) {
  return parse_payload(payload, "REQ_TOKENS", [](ByteReader& r) {
    TokensRequest m;
    m.model_id = r.get<std::uint64_t>();
    m.mode = read_mode(r);
    const auto n = read_count(r, 4);
    m.tokens.resize(n);
    for (auto& t : m.tokens) t = r.get<std::uint32_t>();
    return m;
  });
}

KeysRequest parse_keys_request(ByteView payload) {
  return parse_payload(payload, "REQ_KEYS", [](ByteReader& r) {
    KeysRequest m;
    const auto n = read_count(r, 33);
    for (std::uint32_t i = 0; i < n; ++i) m.keys.push_back(read_key(r));
    return m;
  });
}

EndMessage parse_end(ByteView payload) {
  return parse_payload(payload, "END", [](ByteReader& r) {
    EndMessage m;
    const auto n = read_count(r, 4);
    m.miss_suffix.resize(n);
    for (auto& t : m.miss_suffix) t = r.get<std::uint32_t>();
    const auto k = read_count(r, 33);
    for (std::uint32_t i = 0; i < k; ++i) m.missing_keys.push_back(read_key(r));
    return m;
  });
}

ErrMessage parse_err(ByteView payload) {
  return parse_payload(payload, "ERR", [](ByteReader& r) {
    ErrMessage m;
    m.code = r.get<std::uint16_t>();
    const auto rest = r.get_bytes(r.remaining());
    m.message.assign(rest.begin(), rest.end());
    return m;
  });
}

}  // namespace kdn
