// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include "kdn/codec.hpp"
#include "kdn/error.hpp"

namespace kdn {

Bytes deflate_raw(ByteView data) {
  z_stream zs{};
  // Negative window bits select a bare RFC 1951 stream (no zlib header).
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, -15, 9, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(ErrorCode::kIo, "deflateInit2 failed");
  }
  Bytes out(deflateBound(&zs, static_cast<uLong>(data.size())));
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorCode::kIo, "deflate did not finish");
  return out;
}

Bytes inflate_raw(ByteView data, std::size_t max_output) {
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) throw Error(ErrorCode::kIo, "inflateInit2 failed");
  Bytes out;
  std::uint8_t buf[16384];
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto at = static_cast<std::size_t>(zs.total_in);
      const std::string msg = zs.msg ? zs.msg : (rc == Z_BUF_ERROR ? "truncated stream" : "error");
      inflateEnd(&zs);
      throw Error(ErrorCode::kCorrupt, "inflate: " + msg, at);
    }
    const std::size_t produced = sizeof(buf) - zs.avail_out;
    if (out.size() + produced > max_output) {
      const auto at = static_cast<std::size_t>(zs.total_in);
      inflateEnd(&zs);
      throw Error(ErrorCode::kCorrupt, "inflated size exceeds bound", at);
    }
    out.insert(out.end(), buf, buf + produced);
  }
  const auto consumed = static_cast<std::size_t>(zs.total_in);
  inflateEnd(&zs);
  if (consumed != data.size()) {
    throw Error(ErrorCode::kCorrupt, "trailing bytes after deflate stream", consumed);
  }
  return out;
}

}  // namespace kdn
