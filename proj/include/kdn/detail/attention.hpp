// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdn/model.hpp"

namespace kdn::detail {

// Runs one attention layer for the cache rows listed in `rows` (ascending
// cache indices). `x` holds their residual inputs, rows.size() x d_model, and
// is updated in place to X + MultiHeadAttn(X). Fresh K/V for those rows are
// written into `cache` (rounded to f32) before any of them attends, and each
// row attends causally over cache indices [0, row].
void layer_forward(const Model& model, KvCache& cache, std::size_t layer,
                   std::span<const std::size_t> rows, std::span<double> x);

}  // namespace kdn::detail
