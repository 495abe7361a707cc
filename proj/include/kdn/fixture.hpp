// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "kdn/bytes.hpp"
#include "kdn/model.hpp"

namespace kdn {

// Golden-fixture file ("KDNF"), little-endian:
//   "KDNF" | n_layers u16 | n_heads u16 | d_head u16 | vocab_size u16 |
//   rope_base u16 | n_tokens u16 | start_pos u16 |
//   K_pre f32[L*H*T*D] | V f32[L*H*T*D] | states f32[T*d_model]
// All arrays in (layer, head, token, dim) / (token, dim) order. States must
// cover every token (offset 0); rope_base must be an integer <= 65535.
struct Fixture {
  ModelConfig config;
  KvCache cache;
  HiddenStates states;
};

Bytes encode_fixture(const Fixture& fixture);
Fixture decode_fixture(ByteView bytes);

void write_fixture(const std::filesystem::path& path, const Fixture& fixture);
Fixture read_fixture(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, ByteView data);

}  // namespace kdn
