// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/blender.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdn/detail/attention.hpp"
#include "kdn/error.hpp"

namespace kdn {
using nlohmann::json;

namespace {

void check_segments(const Model& model, std::span<const Segment> segments) {
  if (segments.empty()) throw Error(ErrorCode::kInvalidArgument, "no segments to blend");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const auto where = "segment " + std::to_string(i) + ": ";
    if (!(s.stale_cache.geometry() == model.geometry())) {
      throw Error(ErrorCode::kGeometryMismatch, where + "cache geometry does not match the model");
    }
    if (s.stale_cache.n_tokens() != s.tokens.size()) {
      throw Error(ErrorCode::kGeometryMismatch,
                  where + "cache holds " + std::to_string(s.stale_cache.n_tokens()) +
                      " tokens, segment has " + std::to_string(s.tokens.size()));
    }
    if (s.stale_states && (s.stale_states->d_model != model.config().d_model() ||
                           s.stale_states->offset != 0 ||
                           s.stale_states->rows() != s.tokens.size())) {
      throw Error(ErrorCode::kGeometryMismatch, where + "stale states do not cover the segment");
    }
    model.check_tokens(s.tokens);
  }
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

double max_abs(std::span<const float> a) {
  double m = 0.0;
  for (float x : a) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

}  // namespace

Segment make_segment(const Model& model, std::span<const Token> tokens) {
  auto pre = prefill(model, tokens);
  return {TokenSeq(tokens.begin(), tokens.end()), std::move(pre.cache), std::move(pre.states)};
}

StaleConcat concat_stale(const Model& model, std::span<const Segment> segments) {
  check_segments(model, segments);
  StaleConcat out;
  std::vector<KvCache> parts;
  std::size_t at = 0;
  for (const auto& s : segments) {
    out.boundaries.push_back(at);
    parts.push_back(rebase(s.stale_cache, at));
    at += s.tokens.size();
  }
  out.boundaries.push_back(at);
  out.cache = KvCache::concat(parts);
  return out;
}

std::size_t selection_budget(double r, std::size_t n) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "recompute ratio must lie in [0, 1]");
  }
  if (r == 0.0 || n == 0) return 0;
  const auto base = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(r * static_cast<double>(n))));
  const std::size_t forced = n > 1 ? 2 : 1;
  return std::min(n, std::max(base, forced));
}

std::vector<std::size_t> select_tokens(std::span<const double> scores, std::size_t budget) {
  const std::size_t n = scores.size();
  budget = std::min(budget, n);
  if (budget == 0) return {};
  std::vector<bool> chosen(n, false);
  chosen[0] = true;
  chosen[n - 1] = true;
  std::size_t count = n > 1 ? 2 : 1;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i : order) {
    if (count >= budget) break;
    if (!chosen[i]) {
      chosen[i] = true;
      ++count;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) out.push_back(i);
  }
  return out;
}

BlendResult selective_blend(const Model& model, std::span<const Segment> segments, double r) {
  selection_budget(r, 0);  // validates r
  auto stale = concat_stale(model, segments);
  const auto& cfg = model.config();
  const std::size_t n = stale.cache.n_tokens();
  const std::size_t dm = cfg.d_model();

  TokenSeq all;
  for (const auto& s : segments) all.insert(all.end(), s.tokens.begin(), s.tokens.end());

  BlendResult out;
  out.cache = stale.cache;
  auto& cache = out.cache;

  // First layer: every token, from embeddings.
  std::vector<double> x(n * dm);
  for (std::size_t t = 0; t < n; ++t) {
    const auto e = model.embedding(all[t]);
    std::copy(e.begin(), e.end(), x.begin() + static_cast<std::ptrdiff_t>(t * dm));
  }
  std::vector<std::size_t> every(n);
  std::iota(every.begin(), every.end(), 0);
  detail::layer_forward(model, cache, 0, every, x);

  std::vector<double> scores(n, 0.0);
  if (cfg.n_layers > 1) {
    std::vector<double> v(cfg.d_head);
    for (std::size_t t = 0; t < n; ++t) {
      double sum = 0.0;
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        model.project(1, h, Role::kValue, std::span<const double>(x).subspan(t * dm, dm), v);
        const auto old = stale.cache.v(1, h, t);
        for (std::size_t c = 0; c < cfg.d_head; ++c) {
          const double d = static_cast<double>(static_cast<float>(v[c])) - old[c];
          sum += d * d;
        }
      }
      scores[t] = std::sqrt(sum);
    }
  }

  const auto selected = select_tokens(scores, selection_budget(r, n));
  std::vector<double> xs(selected.size() * dm);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(selected[i] * dm), dm,
                xs.begin() + static_cast<std::ptrdiff_t>(i * dm));
  }
  if (!selected.empty()) {
    for (std::size_t l = 1; l < cfg.n_layers; ++l) {
      detail::layer_forward(model, cache, l, selected, xs);
    }
  }

  // Final states: fresh rows for selected tokens, standalone rows otherwise.
  out.states.d_model = dm;
  out.states.data.assign(n * dm, 0.0);
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& seg = segments[si];
    const HiddenStates states = seg.stale_states ? *seg.stale_states : prefill(model, seg.tokens).states;
    std::copy(states.data.begin(), states.data.end(),
              out.states.data.begin() + static_cast<std::ptrdiff_t>(stale.boundaries[si] * dm));
  }
  for (std::size_t i = 0; i < selected.size(); ++i) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(i * dm), dm,
                out.states.data.begin() + static_cast<std::ptrdiff_t>(selected[i] * dm));
  }

  const auto oracle = prefill(model, all);
  auto& rep = out.report;
  rep.ratio = r;
  rep.n_tokens = n;
  rep.boundaries = stale.boundaries;
  rep.selected = selected;
  rep.scores = std::move(scores);
  rep.kv_error = std::max(max_abs_diff(cache.keys(), oracle.cache.keys()),
                          max_abs_diff(cache.values(), oracle.cache.values()));
  rep.oracle_max_abs = std::max(max_abs(oracle.cache.keys()), max_abs(oracle.cache.values()));
  if (n > 0) {
    double sum = 0.0;
    const auto a = out.states.row(n - 1);
    const auto b = oracle.states.row(n - 1);
    for (std::size_t j = 0; j < dm; ++j) sum += (a[j] - b[j]) * (a[j] - b[j]);
    rep.final_state_error = std::sqrt(sum);
  }
  return out;
}

PrefillResult prefix_extend_path(const Model& model, std::span<const CompressedChunk> hits,
                                 std::span<const Token> miss_suffix) {
  if (hits.empty()) return prefill(model, miss_suffix);
  std::vector<KvCache> parts;
  std::uint64_t expect = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].key.mode != KeyMode::kChain) {
      throw Error(ErrorCode::kInvalidArgument, "prefix reuse needs chain-mode chunks");
    }
    if (!(hits[i].geometry == model.geometry())) {
      throw Error(ErrorCode::kGeometryMismatch, "chunk geometry does not match the model");
    }
    if (hits[i].start_pos != expect) {
      throw Error(ErrorCode::kBrokenChain, "chunk " + std::to_string(i) + " starts at " +
                                               std::to_string(hits[i].start_pos) + ", expected " +
                                               std::to_string(expect));
    }
    parts.push_back(decompress_cache(hits[i]));
    expect += hits[i].n_tokens;
  }
  const auto prefix = KvCache::concat(parts);
  if (miss_suffix.empty()) {
    PrefillResult out{prefix, {}};
    out.states.offset = prefix.n_tokens();
    out.states.d_model = model.config().d_model();
    return out;
  }
  return extend(model, prefix, HiddenStates{}, miss_suffix);
}

json BlendReport::to_json() const {
  return json{{"ratio", ratio},
              {"n_tokens", n_tokens},
              {"boundaries", boundaries},
              {"selected", selected},
              {"scores", scores},
              {"kv_error", kv_error},
              {"final_state_error", final_state_error},
              {"oracle_max_abs", oracle_max_abs}};
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_head", c.d_head},
              {"vocab_size", c.vocab_size},
              {"rope_base", c.rope_base}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "model config must be a JSON object");
  ModelConfig c;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_head = j.value("d_head", c.d_head);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.rope_base = j.value("rope_base", c.rope_base);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace kdn
