// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "kdn/codec.hpp"
#include "kdn/model.hpp"

namespace kdn {

// Slowly varying K/V: sin(0.02 t + 0.5 d + 0.9 h + 1.3 l), V phase-shifted
// by 0.7. Stands in for the token-wise locality of real caches.
KvCache smooth_fixture(CacheGeometry geometry = {2, 2, 8}, std::size_t n_tokens = 512);

// Prefill of n_tokens tokens drawn uniformly from the vocabulary.
KvCache model_fixture(const Model& model, std::size_t n_tokens, std::uint64_t seed);

// Largest scale/2 over all quantization groups (0 for passthrough).
double quantization_bound(const QuantizedCache& q);

struct CodecBenchRow {
  std::string fixture;
  std::size_t n_tokens = 0;
  std::string profile;
  std::uint64_t uncompressed_bytes = 0;
  std::uint64_t compressed_bytes = 0;  // whole serialized chunk
  double ratio = 0.0;
  double max_abs_error = 0.0;
  double error_bound = 0.0;  // quantization_bound()
  double encode_ms = 0.0;
  double decode_ms = 0.0;

  nlohmann::json to_json() const;
};

CodecBenchRow bench_codec(const std::string& fixture, const KvCache& cache,
                          const std::string& profile_name);

}  // namespace kdn
