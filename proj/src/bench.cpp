// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace kdn {

KvCache smooth_fixture(CacheGeometry g, std::size_t n_tokens) {
  KvCache c(g, n_tokens, 0);
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t h = 0; h < g.n_heads; ++h) {
      for (std::size_t t = 0; t < n_tokens; ++t) {
        for (std::size_t d = 0; d < g.d_head; ++d) {
          const double phase = 0.02 * static_cast<double>(t) + 0.5 * static_cast<double>(d) +
                               0.9 * static_cast<double>(h) + 1.3 * static_cast<double>(l);
          c.k(l, h, t)[d] = static_cast<float>(std::sin(phase));
          c.v(l, h, t)[d] = static_cast<float>(std::sin(phase + 0.7));
        }
      }
    }
  }
  return c;
}

KvCache model_fixture(const Model& model, std::size_t n_tokens, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Token> pick(0, model.config().vocab_size - 1);
  TokenSeq tokens(n_tokens);
  for (auto& t : tokens) t = pick(rng);
  return prefill(model, tokens).cache;
}

double quantization_bound(const QuantizedCache& q) {
  if (q.quant_bits == 32) return 0.0;
  double m = 0.0;
  for (const auto* t : {&q.k, &q.v}) {
    for (float s : t->scale) m = std::max(m, 0.5 * static_cast<double>(s));
  }
  return m;
}

nlohmann::json CodecBenchRow::to_json() const {
  return {{"fixture", fixture},
          {"n_tokens", n_tokens},
          {"profile", profile},
          {"uncompressed_bytes", uncompressed_bytes},
          {"compressed_bytes", compressed_bytes},
          {"ratio", ratio},
          {"max_abs_error", max_abs_error},
          {"error_bound", error_bound},
          {"encode_ms", encode_ms},
          {"decode_ms", decode_ms}};
}

CodecBenchRow bench_codec(const std::string& fixture, const KvCache& cache,
                          const std::string& profile_name) {
  using Clock = std::chrono::steady_clock;
  const auto profile = parse_profile(profile_name);
  CodecBenchRow row;
  row.fixture = fixture;
  row.n_tokens = cache.n_tokens();
  row.profile = profile_name;

  const auto t0 = Clock::now();
  const auto chunk = compress_cache(cache, profile);
  const auto blob = serialize_chunk(chunk);
  const auto t1 = Clock::now();
  const auto back = decompress_cache(parse_chunk(blob));
  const auto t2 = Clock::now();

  row.uncompressed_bytes = chunk.uncompressed_len;
  row.compressed_bytes = blob.size();
  row.ratio = compression_ratio(chunk);
  row.error_bound = quantization_bound(quantize(cache, profile));
  for (const auto& [a, b] : {std::pair{cache.keys(), back.keys()}, std::pair{cache.values(), back.values()}}) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      row.max_abs_error = std::max(row.max_abs_error,
                                   std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
  }
  row.encode_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  row.decode_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  return row;
}

}  // namespace kdn
