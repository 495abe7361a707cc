// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "kdn/bench.hpp"
#include "kdn/blender.hpp"
#include "kdn/error.hpp"
#include "kdn/store.hpp"
#include "test_support.hpp"

namespace kdn {
namespace {

using testing::golden;
using testing::max_abs_diff;

std::vector<Segment> segments_of(const Model& m, const std::vector<TokenSeq>& parts) {
  std::vector<Segment> out;
  for (const auto& p : parts) out.push_back(make_segment(m, p));
  return out;
}

TEST(Budget, RoundsAndForcesEndpoints) {
  EXPECT_EQ(selection_budget(0.0, 64), 0u);
  EXPECT_EQ(selection_budget(0.15, 64), 10u);
  EXPECT_EQ(selection_budget(0.5, 64), 32u);
  EXPECT_EQ(selection_budget(1.0, 64), 64u);
  EXPECT_EQ(selection_budget(0.01, 10), 2u);
  EXPECT_EQ(selection_budget(0.01, 1), 1u);
  EXPECT_EQ(selection_budget(0.7, 0), 0u);
  EXPECT_THROW(selection_budget(-0.1, 4), Error);
  EXPECT_THROW(selection_budget(1.5, 4), Error);
  EXPECT_THROW(selection_budget(std::nan(""), 4), Error);
}

TEST(Select, EndpointsThenScoresTiesToLowerIndex) {
  const std::vector<double> scores{0.0, 5.0, 1.0, 5.0, 9.0, 0.0};
  EXPECT_EQ(select_tokens(scores, 0), (std::vector<std::size_t>{}));
  EXPECT_EQ(select_tokens(scores, 2), (std::vector<std::size_t>{0, 5}));
  EXPECT_EQ(select_tokens(scores, 3), (std::vector<std::size_t>{0, 4, 5}));
  EXPECT_EQ(select_tokens(scores, 4), (std::vector<std::size_t>{0, 1, 4, 5}));
  EXPECT_EQ(select_tokens(scores, 99).size(), 6u);
}

TEST(ConcatStale, SingleSegmentIsItsPrefill) {
  const Model m(ModelConfig{});
  const TokenSeq t{3, 1, 4, 1, 5};
  const auto s = concat_stale(m, segments_of(m, {t}));
  EXPECT_EQ(s.cache, prefill(m, t).cache);
  EXPECT_EQ(s.boundaries, (std::vector<std::size_t>{0, 5}));
}

TEST(ConcatStale, TwoSegmentsNeedBlending) {
  const Model m(ModelConfig{});
  const TokenSeq a{3, 1, 4, 1, 5}, b{9, 2, 6, 5};
  const auto s = concat_stale(m, segments_of(m, {a, b}));
  EXPECT_EQ(s.boundaries, (std::vector<std::size_t>{0, 5, 9}));
  TokenSeq ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const auto oracle = prefill(m, ab).cache;
  EXPECT_EQ(s.cache.slice(0, 5), oracle.slice(0, 5));
  EXPECT_GT(max_abs_diff(s.cache.slice(5, 9), oracle.slice(5, 9)), 1e-6);
}

TEST(ConcatStale, RejectsMismatchedSegments) {
  const Model m(ModelConfig{});
  ModelConfig other;
  other.n_layers = 3;
  std::vector<Segment> segs{make_segment(m, TokenSeq{1, 2}), make_segment(Model(other), TokenSeq{3})};
  EXPECT_THROW(concat_stale(m, segs), Error);
  Segment lying = make_segment(m, TokenSeq{1, 2});
  lying.tokens.push_back(3);
  EXPECT_THROW(concat_stale(m, std::vector<Segment>{lying}), Error);
}

TEST(Blend, FullRecomputeEqualsPrefill) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 15; ++trial) {
    const auto cfg = testing::random_config(rng);
    const Model m(cfg);
    std::vector<TokenSeq> parts(1 + rng() % 4);
    for (auto& p : parts) p = testing::random_tokens(rng, 1 + rng() % 12, cfg.vocab_size);
    const auto r = selective_blend(m, segments_of(m, parts), 1.0);
    EXPECT_LE(r.report.kv_error, 1e-6 * r.report.oracle_max_abs);
    EXPECT_LE(r.report.final_state_error, 1e-6);
    EXPECT_EQ(r.report.selected.size(), r.report.n_tokens);
  }
}

TEST(Blend, SingleSegmentIsExactAtAnyRatio) {
  const Model m(ModelConfig{});
  const TokenSeq t{7, 7, 1, 30, 2, 2, 9};
  for (double r : {0.0, 0.2, 0.6, 1.0}) {
    const auto res = selective_blend(m, segments_of(m, {t}), r);
    EXPECT_EQ(res.report.kv_error, 0.0) << r;
    EXPECT_EQ(res.report.final_state_error, 0.0) << r;
  }
}

TEST(Blend, StatesCoverEveryRow) {
  const Model m(ModelConfig{});
  const auto res = selective_blend(m, segments_of(m, {{1, 2, 3}, {4, 5}}), 0.4);
  EXPECT_EQ(res.states.offset, 0u);
  EXPECT_EQ(res.states.rows(), 5u);
  EXPECT_EQ(res.cache.n_tokens(), 5u);
  EXPECT_EQ(res.report.scores.size(), 5u);
  // The first segment's scores are zero: its stale rows are already exact.
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(res.report.scores[t], 0.0);
}

TEST(Blend, SingleLayerModelScoresZero) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  const Model m(cfg);
  const auto res = selective_blend(m, segments_of(m, {{1, 2}, {3, 4}}), 0.5);
  for (double s : res.report.scores) EXPECT_EQ(s, 0.0);
  // Layer 0 is recomputed for every token, so a 1-layer blend is exact.
  EXPECT_EQ(res.report.kv_error, 0.0);
}

// Errors recorded by the independent oracle on the frozen fixture.
TEST(Blend, FrozenCurveMatchesOracle) {
  const Model m(ModelConfig{});
  const auto& g = golden();
  const auto parts = g.at("blend_segments").get<std::vector<TokenSeq>>();
  const auto segs = segments_of(m, parts);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& point : g.at("blend_curve")) {
    const double r = point.at("ratio").get<double>();
    const auto res = selective_blend(m, segs, r);
    EXPECT_EQ(res.report.selected, point.at("selected").get<std::vector<std::size_t>>()) << r;
    const double want = point.at("kv_error").get<double>();
    EXPECT_NEAR(res.report.kv_error, want, 1e-6 + 1e-3 * want) << r;
    EXPECT_NEAR(res.report.final_state_error, point.at("final_state_error").get<double>(), 1e-7) << r;
    EXPECT_LE(res.report.kv_error, prev) << r;
    prev = res.report.kv_error;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(PrefixExtend, ZeroHitsIsPlainPrefill) {
  const Model m(ModelConfig{});
  const TokenSeq t{1, 2, 3};
  const auto r = prefix_extend_path(m, {}, t);
  EXPECT_EQ(r.cache, prefill(m, t).cache);
}

class PrefixExtendStore : public ::testing::Test {
 protected:
  std::vector<CompressedChunk> hits_for(const TokenSeq& tokens, const char* profile) {
    StoreConfig cfg;
    cfg.root = dir.path() / profile;
    cfg.chunk_size = 8;
    cfg.durable = false;
    cfg.on_warning = [](const std::string&) {};
    Store s(cfg);
    s.store_text(model, tokens, KeyMode::kChain, parse_profile(profile));
    std::vector<CompressedChunk> out;
    for (auto& h : s.retrieve_text(model.config().model_id(), tokens, KeyMode::kChain).hits) {
      out.push_back(std::move(h.chunk));
    }
    return out;
  }

  testing::TempDir dir;
  Model model{ModelConfig{}};
};

TEST_F(PrefixExtendStore, LosslessProfileIsExact) {
  const TokenSeq prefix{5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  const TokenSeq suffix{21, 22, 23, 24, 25};
  TokenSeq all = prefix;
  all.insert(all.end(), suffix.begin(), suffix.end());
  const auto hits = hits_for(prefix, "raw");
  const auto full = prefill(model, all);

  const auto only = prefix_extend_path(model, hits, {});
  EXPECT_EQ(only.cache, prefill(model, prefix).cache);
  EXPECT_EQ(only.states.rows(), 0u);

  const auto r = prefix_extend_path(model, hits, suffix);
  EXPECT_LE(max_abs_diff(r.cache, full.cache), 1e-9);
  EXPECT_EQ(r.states.offset, prefix.size());
  EXPECT_LE(max_abs_diff(r.states.data, std::span<const double>(full.states.data).subspan(prefix.size() * 8)),
            1e-9);
}

TEST_F(PrefixExtendStore, QuantizedPrefixStaysNearPrefill) {
  const TokenSeq prefix{1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31};
  const TokenSeq suffix{2, 4, 6, 8, 10};
  TokenSeq all = prefix;
  all.insert(all.end(), suffix.begin(), suffix.end());
  const auto hits = hits_for(prefix, "q8-deflate");
  double bound = 0.0;
  for (const auto& h : hits) {
    auto q = quantize(decompress_cache(h), h.profile);
    bound = std::max(bound, quantization_bound(q));
  }
  const auto full = prefill(model, all);
  const auto r = prefix_extend_path(model, hits, suffix);
  EXPECT_LE(max_abs_diff(r.cache.slice(0, 16), full.cache.slice(0, 16)), 2 * bound + 1e-6);
  // Suffix rows inherit the prefix error through attention.
  EXPECT_LE(max_abs_diff(r.cache.slice(16, 21), full.cache.slice(16, 21)), 0.05);
}

TEST_F(PrefixExtendStore, BrokenChainAndStandaloneAreRejected) {
  const TokenSeq prefix{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17};
  auto hits = hits_for(prefix, "q8-varint");
  ASSERT_EQ(hits.size(), 3u);
  std::vector<CompressedChunk> gap{hits[0], hits[2]};
  try {
    prefix_extend_path(model, gap, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBrokenChain);
  }
  hits[1].key.mode = KeyMode::kStandalone;
  EXPECT_THROW(prefix_extend_path(model, hits, {}), Error);
}

TEST(ModelConfigJson, RoundTripAndValidation) {
  ModelConfig c;
  c.n_layers = 3;
  c.rope_base = 500.0;
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"d_head", 3}}), Error);
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"n_heads", "two"}}), Error);
  EXPECT_THROW(model_config_from_json(nlohmann::json::array()), Error);
}

}  // namespace
}  // namespace kdn
