// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/fixture.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "kdn/error.hpp"

namespace kdn {
namespace {

std::uint16_t narrow16(std::uint64_t v, const char* what) {
  if (v > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::kOutOfRange,
                std::string("fixture field ") + what + " does not fit in u16: " + std::to_string(v));
  }
  return static_cast<std::uint16_t>(v);
}

}  // namespace

Bytes encode_fixture(const Fixture& f) {
  const auto& c = f.config;
  if (f.states.offset != 0 || f.states.rows() != f.cache.n_tokens()) {
    throw Error(ErrorCode::kGeometryMismatch, "fixture states must cover every cache token");
  }
  if (!(f.cache.geometry() == CacheGeometry::of(c))) {
    throw Error(ErrorCode::kGeometryMismatch, "fixture cache does not match its config");
  }
  if (c.rope_base != std::floor(c.rope_base)) {
    throw Error(ErrorCode::kOutOfRange, "fixture rope_base must be an integer");
  }
  Bytes out;
  ByteWriter w(out);
  w.put_str("KDNF");
  w.put(narrow16(c.n_layers, "n_layers"));
  w.put(narrow16(c.n_heads, "n_heads"));
  w.put(narrow16(c.d_head, "d_head"));
  w.put(narrow16(c.vocab_size, "vocab_size"));
  w.put(narrow16(static_cast<std::uint64_t>(c.rope_base), "rope_base"));
  w.put(narrow16(f.cache.n_tokens(), "n_tokens"));
  w.put(narrow16(f.cache.start_pos(), "start_pos"));
  for (float x : f.cache.keys()) w.put_f32(x);
  for (float x : f.cache.values()) w.put_f32(x);
  for (double x : f.states.data) w.put_f32(static_cast<float>(x));
  return out;
}

Fixture decode_fixture(ByteView bytes) {
  ByteReader r(bytes);
  r.expect_magic("KDNF");
  Fixture f;
  f.config.n_layers = r.get<std::uint16_t>();
  f.config.n_heads = r.get<std::uint16_t>();
  f.config.d_head = r.get<std::uint16_t>();
  f.config.vocab_size = r.get<std::uint16_t>();
  f.config.rope_base = r.get<std::uint16_t>();
  const std::size_t n_tokens = r.get<std::uint16_t>();
  const std::uint64_t start_pos = r.get<std::uint16_t>();
  try {
    f.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorrupt, std::string("fixture config: ") + e.what(), 4);
  }
  const std::size_t cache_elems = CacheGeometry::of(f.config).elements_per_token() * n_tokens;
  const std::size_t state_elems = n_tokens * f.config.d_model();
  if (r.remaining() != (2 * cache_elems + state_elems) * 4) {
    throw Error(ErrorCode::kCorrupt, "fixture body length does not match header", r.offset());
  }
  f.cache = KvCache(CacheGeometry::of(f.config), n_tokens, start_pos);
  for (float& x : f.cache.keys()) x = r.get_f32();
  for (float& x : f.cache.values()) x = r.get_f32();
  f.states.d_model = f.config.d_model();
  f.states.data.resize(state_elems);
  for (double& x : f.states.data) x = r.get_f32();
  return f;
}

void write_fixture(const std::filesystem::path& path, const Fixture& fixture) {
  write_file_atomic(path, encode_fixture(fixture));
}

Fixture read_fixture(const std::filesystem::path& path) { return decode_fixture(read_file(path)); }

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes data(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::kIo, "short read on " + path.string());
  }
  return data;
}

void write_file_atomic(const std::filesystem::path& path, ByteView data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out.flush()) throw Error(ErrorCode::kIo, "write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename " + tmp.string() + ": " + ec.message());
}

}  // namespace kdn
