// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include <boost/crc.hpp>

#include "kdn/bytes.hpp"

namespace kdn {

// CRC-32C (Castagnoli, reflected, init/xorout 0xFFFFFFFF).
class Crc32c {
 public:
  void update(ByteView data) { crc_.process_bytes(data.data(), data.size()); }
  std::uint32_t value() const { return crc_.checksum(); }

 private:
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc_;
};

inline std::uint32_t crc32c(ByteView data) {
  Crc32c crc;
  crc.update(data);
  return crc.value();
}

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(ByteView data);

}  // namespace kdn
