// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "kdn/codec.hpp"
#include "kdn/model.hpp"

namespace kdn {

// One independently prefilled piece of text.
struct Segment {
  TokenSeq tokens;
  KvCache stale_cache;  // prefilled at position 0
  // Standalone final hidden states, used for tokens the blend leaves stale.
  // Recomputed on demand when absent.
  std::optional<HiddenStates> stale_states;
};

Segment make_segment(const Model& model, std::span<const Token> tokens);

struct StaleConcat {
  KvCache cache;
  std::vector<std::size_t> boundaries;  // start index of each segment, plus the total
};

// Rebases every segment to its offset in the concatenation and joins them.
// No attention is recomputed.
StaleConcat concat_stale(const Model& model, std::span<const Segment> segments);

struct BlendReport {
  double ratio = 0.0;
  std::size_t n_tokens = 0;
  std::vector<std::size_t> boundaries;
  std::vector<std::size_t> selected;  // ascending
  std::vector<double> scores;         // per token
  double kv_error = 0.0;
  double final_state_error = 0.0;
  double oracle_max_abs = 0.0;  // max |element| of the oracle cache

  nlohmann::json to_json() const;
};

struct BlendResult {
  KvCache cache;
  HiddenStates states;  // every row, offset 0
  BlendReport report;
};

// Number of tokens recomputed at ratio r for n tokens: 0 at r == 0, otherwise
// max(1, round(r*n)) raised to cover token 0 and the last token, capped at n.
std::size_t selection_budget(double r, std::size_t n);

// Picks `budget` tokens: 0 and n-1 first, then the highest scores, ties to
// the lower index. Returned ascending.
std::vector<std::size_t> select_tokens(std::span<const double> scores, std::size_t budget);

// Composes standalone segments into one cache for their concatenation.
// The first layer is recomputed for every token; its outputs feed the
// second layer's V projection, whose distance from the stale V rows
// (summed over heads, L2) scores each token. Deeper layers recompute only
// the selected rows against the merged cache. The report compares against
// a full prefill of the concatenation.
BlendResult selective_blend(const Model& model, std::span<const Segment> segments, double r);

// Decompresses consecutive chain chunks into one prefix cache and extends
// it over miss_suffix. Returned states cover the suffix rows only.
PrefillResult prefix_extend_path(const Model& model, std::span<const CompressedChunk> hits,
                                 std::span<const Token> miss_suffix);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace kdn
