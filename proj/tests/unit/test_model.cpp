// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "kdn/error.hpp"
#include "kdn/fixture.hpp"
#include "kdn/model.hpp"
#include "test_support.hpp"

namespace kdn {
namespace {

using testing::golden;
using testing::max_abs_diff;

TEST(ClosedForm, WeightSpotValue) {
  const double w = closed_form_weight(0, 0, 0, 16);
  EXPECT_DOUBLE_EQ(w, 0.5 * std::sin(0.37) / 4.0);
  EXPECT_NEAR(w, 0.045202, 1e-6);
  EXPECT_DOUBLE_EQ(w, golden().at("weight_tag0_i0_j0_fan16").get<double>());
  EXPECT_DOUBLE_EQ(closed_form_embedding(0, 0), golden().at("embedding_0_0").get<double>());
}

TEST(ClosedForm, BuildIsDeterministic) {
  const ModelConfig cfg;
  const Model a(cfg), b(cfg);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (auto role : {Role::kQuery, Role::kKey, Role::kValue, Role::kOutput}) {
        const auto wa = a.weight(l, h, role);
        const auto wb = b.weight(l, h, role);
        ASSERT_TRUE(std::equal(wa.begin(), wa.end(), wb.begin(), wb.end()));
      }
    }
  }
}

TEST(ModelConfig, IdMatchesOracle) {
  EXPECT_EQ(std::to_string(ModelConfig{}.model_id()), golden().at("model_id_default").get<std::string>());
  ModelConfig other;
  other.rope_base = 500000.0;
  EXPECT_NE(other.model_id(), ModelConfig{}.model_id());
}

TEST(ModelConfig, RejectsBadShapes) {
  auto expect_invalid = [](ModelConfig c) {
    try {
      c.validate();
      ADD_FAILURE() << "accepted invalid config";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    }
  };
  ModelConfig c;
  c.d_head = 3;
  expect_invalid(c);
  c = {};
  c.n_layers = 0;
  expect_invalid(c);
  c = {};
  c.n_heads = 17;
  expect_invalid(c);
  c = {};
  c.rope_base = 1.0;
  expect_invalid(c);
}

TEST(Prefill, EmptyInput) {
  const Model m(ModelConfig{});
  const auto r = prefill(m, TokenSeq{});
  EXPECT_EQ(r.cache.n_tokens(), 0u);
  EXPECT_EQ(r.states.rows(), 0u);
}

TEST(Prefill, SingleTokenKeyIsEmbeddingTimesWk) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  const Model m(cfg);
  const TokenSeq tokens{5};
  const auto r = prefill(m, tokens);
  std::vector<double> expect(cfg.d_head);
  m.project(0, 0, Role::kKey, m.embedding(5), expect);
  for (std::size_t d = 0; d < cfg.d_head; ++d) {
    EXPECT_EQ(r.cache.k(0, 0, 0)[d], static_cast<float>(expect[d]));
  }
}

TEST(Prefill, OutOfVocabulary) {
  const Model m(ModelConfig{});
  const TokenSeq tokens{1, 32};
  try {
    prefill(m, tokens);
    FAIL() << "expected kOutOfRange";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfRange);
  }
}

// Golden tensors come from an independent double-precision recomputation.
// Summation order differs between the two implementations, so stored f32
// values may differ in the last place.
TEST(Prefill, MatchesGoldenFixture) {
  const auto golden_fixture = read_fixture(testing::data_path("prefill_default_1_2_3.kdnf"));
  EXPECT_EQ(golden_fixture.config, ModelConfig{});
  const Model m(golden_fixture.config);
  const TokenSeq tokens{1, 2, 3};
  const auto r = prefill(m, tokens);
  ASSERT_EQ(r.cache.n_tokens(), 3u);
  EXPECT_LE(max_abs_diff(r.cache, golden_fixture.cache), 1e-6);
  std::vector<double> states_f32(r.states.data.begin(), r.states.data.end());
  for (auto& x : states_f32) x = static_cast<float>(x);
  EXPECT_LE(max_abs_diff(states_f32, golden_fixture.states.data), 1e-6);

  // Header and layout round-trip bit-exact.
  Fixture mine{m.config(), r.cache, r.states};
  const auto bytes = encode_fixture(mine);
  const auto file = read_file(testing::data_path("prefill_default_1_2_3.kdnf"));
  ASSERT_EQ(bytes.size(), file.size());
  EXPECT_TRUE(std::equal(bytes.begin(), bytes.begin() + 18, file.begin()));
}

TEST(Prefill, CausalPrefixProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = testing::random_config(rng);
    const Model m(cfg);
    const auto tokens = testing::random_tokens(rng, 1 + rng() % 40, cfg.vocab_size);
    const std::size_t cut = rng() % (tokens.size() + 1);
    const auto full = prefill(m, tokens);
    const auto head = prefill(m, std::span<const Token>(tokens).first(cut));
    EXPECT_EQ(full.cache.slice(0, cut), head.cache);
  }
}

TEST(Extend, EmptySuffixIsIdentity) {
  const Model m(ModelConfig{});
  const TokenSeq a{4, 8, 15, 16};
  const auto base = prefill(m, a);
  const auto ext = extend(m, base.cache, base.states, TokenSeq{});
  EXPECT_EQ(ext.cache, base.cache);
  EXPECT_EQ(ext.states.data, base.states.data);
}

TEST(Extend, EqualsPrefillOfConcatenation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto cfg = testing::random_config(rng);
    const Model m(cfg);
    const auto a = testing::random_tokens(rng, rng() % 30, cfg.vocab_size);
    const auto b = testing::random_tokens(rng, rng() % 30, cfg.vocab_size);
    TokenSeq ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const auto pa = prefill(m, a);
    const auto ext = extend(m, pa.cache, pa.states, b);
    const auto full = prefill(m, ab);
    EXPECT_LE(max_abs_diff(ext.cache, full.cache), 1e-9);
    EXPECT_LE(max_abs_diff(ext.states.data, full.states.data), 1e-9);
  }
}

TEST(Extend, WithoutPriorStatesCoversSuffixRows) {
  const Model m(ModelConfig{});
  const TokenSeq a{1, 2, 3}, b{4, 5};
  const auto pa = prefill(m, a);
  const auto ext = extend(m, pa.cache, HiddenStates{}, b);
  EXPECT_EQ(ext.states.offset, 3u);
  EXPECT_EQ(ext.states.rows(), 2u);
  const TokenSeq ab{1, 2, 3, 4, 5};
  const auto full = prefill(m, ab);
  EXPECT_LE(max_abs_diff(ext.states.row(1), full.states.row(4)), 1e-9);
}

TEST(Extend, RejectsForeignGeometry) {
  const Model m(ModelConfig{});
  ModelConfig other;
  other.n_heads = 1;
  const auto pa = prefill(Model(other), TokenSeq{1});
  try {
    extend(m, pa.cache, pa.states, TokenSeq{2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGeometryMismatch);
  }
}

TEST(Rebase, SameStartIsIdentityAndOnlyMovesMetadata) {
  const Model m(ModelConfig{});
  const auto c = prefill(m, TokenSeq{3, 1, 4}).cache;
  EXPECT_EQ(rebase(c, c.start_pos()), c);
  const auto moved = rebase(c, 100);
  EXPECT_EQ(moved.start_pos(), 100u);
  EXPECT_TRUE(std::equal(moved.keys().begin(), moved.keys().end(), c.keys().begin()));
}

TEST(KvCache, SliceConcatRoundTrip) {
  const Model m(ModelConfig{});
  const auto c = prefill(m, TokenSeq{1, 2, 3, 4, 5, 6, 7}).cache;
  const std::vector<KvCache> parts{c.slice(0, 2), c.slice(2, 5), c.slice(5, 7)};
  EXPECT_EQ(parts[1].start_pos(), 2u);
  EXPECT_EQ(KvCache::concat(parts), c);
}

TEST(Fixture, RoundTripAndCorruption) {
  const Model m(ModelConfig{});
  const auto r = prefill(m, TokenSeq{9, 9, 9});
  Fixture f{m.config(), r.cache, r.states};
  auto bytes = encode_fixture(f);
  const auto back = decode_fixture(bytes);
  EXPECT_EQ(back.cache, r.cache);

  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    const ByteView prefix(bytes.data(), cut);
    try {
      decode_fixture(prefix);
      ADD_FAILURE() << "accepted truncation at " << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCorrupt);
    }
  }
  bytes[0] = 'X';
  EXPECT_THROW(decode_fixture(bytes), Error);
}

}  // namespace
}  // namespace kdn
