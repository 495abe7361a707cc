// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "kdn/cost_model.hpp"
#include "kdn/error.hpp"
#include "test_support.hpp"

namespace kdn::cost {
namespace {

using kdn::testing::golden;

nlohmann::json params_doc() {
  std::ifstream in(std::string(KDN_CONFIG_DIR) + "/cost_params.json");
  return nlohmann::json::parse(in);
}

CostParams fixture_params() { return params_from_json(params_doc()); }

double rel(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

void expect_breakdown(const CostBreakdown& got, const nlohmann::json& want, double tol = 1e-14) {
  EXPECT_LE(rel(got.gpu_seconds, want.at("gpu_seconds").get<double>()), tol);
  EXPECT_LE(rel(got.storage_bytes, want.at("storage_bytes").get<double>()), tol);
  EXPECT_LE(rel(got.network_bytes, want.at("network_bytes").get<double>()), tol);
  EXPECT_LE(rel(got.delay_seconds, want.at("delay_seconds").get<double>()), tol);
  EXPECT_LE(rel(got.money, want.at("money").get<double>()), tol);
}

TEST(PerQuery, MatchesOracleTable) {
  const auto p = fixture_params();
  const auto mix = mix_from_json(params_doc());
  const auto& g = golden().at("cost_per_query");
  expect_breakdown(per_query(System::kFineTune, p, mix), g.at("FT"));
  expect_breakdown(per_query(System::kInContext, p, mix), g.at("IC"));
  expect_breakdown(per_query(System::kKvCache, p, mix), g.at("KV"));
  Conventions printed;
  printed.swapped_delay_kv = true;
  expect_breakdown(per_query(System::kKvCache, p, mix, printed), golden().at("cost_per_query_swapped_delay"));
}

TEST(PerQuery, Degenerates) {
  auto p = fixture_params();
  Conventions no_tq;
  no_tq.include_TQ = false;
  const auto ft = per_query(System::kFineTune, p, {0.4, 0.0}, no_tq);
  EXPECT_EQ(ft.gpu_seconds, 0.0);
  EXPECT_EQ(ft.storage_bytes, 0.0);
  EXPECT_EQ(ft.network_bytes, 0.0);
  EXPECT_EQ(ft.delay_seconds, 0.0);
  EXPECT_EQ(ft.money, 0.0);

  const auto kv = per_query(System::kKvCache, p, {0.0, 0.3}, no_tq);
  EXPECT_EQ(kv.gpu_seconds, p.T_prefill);
  EXPECT_EQ(kv.storage_bytes, p.S_kv);
  EXPECT_EQ(kv.network_bytes, 0.0);
  EXPECT_EQ(kv.delay_seconds, p.T_prefill);

  p.S_text = 10e6;
  p.C_net = 1e-10;
  p.C_gpu = 0.0;
  const auto ic = per_query(System::kInContext, p, {0.5, 0.5}, no_tq);
  EXPECT_NEAR(ic.money, 1e-3, 1e-18);
}

TEST(PerQuery, ValidatesInputs) {
  auto p = fixture_params();
  EXPECT_THROW(per_query(System::kKvCache, p, {0.8, 0.3}), Error);
  EXPECT_THROW(per_query(System::kKvCache, p, {-0.1, 0.0}), Error);
  p.B = 0.0;
  EXPECT_THROW(per_query(System::kKvCache, p, {0.1, 0.1}), Error);
  p = fixture_params();
  p.C_gpu = -1.0;
  EXPECT_THROW(per_query(System::kKvCache, p, {0.1, 0.1}), Error);
  p.C_gpu = std::numeric_limits<double>::infinity();
  EXPECT_THROW(per_query(System::kKvCache, p, {0.1, 0.1}), Error);
}

Trace trace_of(std::initializer_list<std::pair<double, std::uint64_t>> q) {
  Trace t;
  for (auto [time, ctx] : q) t.push_back({time, ctx});
  return t;
}

TEST(Simulate, AllNewContexts) {
  const auto p = fixture_params();
  const auto t = trace_of({{1, 1}, {2, 2}, {3, 3}, {4000, 4}});
  const auto mix = empirical_mix(t, p.T);
  EXPECT_EQ(mix.r1, 0.0);
  EXPECT_EQ(mix.r2, 1.0);
  for (auto s : kSystems) {
    const auto sim = simulate_trace(s, p, t);
    const auto cf = per_query(s, p, {0.0, 1.0});
    EXPECT_EQ(sim.gpu_seconds, cf.gpu_seconds);
    EXPECT_EQ(sim.money, cf.money);
    EXPECT_EQ(sim.delay_seconds, cf.delay_seconds);
  }
}

TEST(Simulate, EachContextTwiceInPeriod) {
  const auto p = fixture_params();
  const auto t = trace_of({{1, 1}, {2, 2}, {3, 1}, {4, 2}, {5, 3}, {6, 3}});
  const auto mix = empirical_mix(t, p.T);
  EXPECT_DOUBLE_EQ(mix.r1, 0.5);
  EXPECT_DOUBLE_EQ(mix.r2, 0.5);
  for (auto s : kSystems) {
    const auto sim = simulate_trace(s, p, t);
    const auto cf = per_query(s, p, mix);
    EXPECT_LE(rel(sim.money, cf.money), 1e-12);
    EXPECT_LE(rel(sim.delay_seconds, cf.delay_seconds), 1e-12);
  }
}

TEST(Simulate, EarlierPeriodContextsArePrefilledAgain) {
  const auto p = fixture_params();
  // Context 1 returns after a refresh: neither seen this period nor new.
  const auto t = trace_of({{10, 1}, {20, 1}, {3700, 1}, {3710, 2}});
  const auto mix = empirical_mix(t, p.T);
  EXPECT_DOUBLE_EQ(mix.r1, 0.25);
  EXPECT_DOUBLE_EQ(mix.r2, 0.5);
  for (auto s : kSystems) {
    const auto sim = simulate_trace(s, p, t);
    const auto cf = per_query(s, p, mix);
    EXPECT_LE(rel(sim.gpu_seconds, cf.gpu_seconds), 1e-12) << to_string(s);
    EXPECT_LE(rel(sim.storage_bytes, cf.storage_bytes), 1e-12) << to_string(s);
    EXPECT_LE(rel(sim.network_bytes, cf.network_bytes), 1e-12) << to_string(s);
    EXPECT_LE(rel(sim.delay_seconds, cf.delay_seconds), 1e-12) << to_string(s);
  }
}

TEST(Simulate, RandomTracesAgreeWithClosedForm) {
  const auto p = fixture_params();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_trace(rng, 300, 40, 3, p.T);
    const auto mix = empirical_mix(t, p.T);
    for (auto s : kSystems) {
      EXPECT_LE(rel(simulate_trace(s, p, t).money, per_query(s, p, mix).money), 1e-12);
    }
  }
}

TEST(Simulate, RejectsUnsortedTimes) {
  const auto p = fixture_params();
  EXPECT_THROW(simulate_trace(System::kKvCache, p, trace_of({{5, 1}, {4, 2}})), Error);
  EXPECT_THROW(simulate_trace(System::kKvCache, p, trace_of({{-1, 1}})), Error);
  EXPECT_EQ(simulate_trace(System::kKvCache, p, Trace{}).money, 0.0);
}

TEST(BestSystem, FineTuneWinsWithoutNewContexts) {
  auto p = fixture_params();
  const auto b = best_system(p, {0.9, 0.0}, Objective::kMoney);
  EXPECT_EQ(b.system, System::kFineTune);
  EXPECT_GT(b.margin, 0.0);
}

TEST(BestSystem, AllNewMakesKvPayStorageForNothing) {
  const auto p = fixture_params();
  const auto b = best_system(p, {0.0, 1.0}, Objective::kMoney);
  EXPECT_LE(b.values[1], b.values[2]);
}

TEST(BestSystem, KvWinsWithMostlyRepeatsAndFastLink) {
  auto p = fixture_params();
  p.B = p.S_kv / (0.1 * p.T_prefill);
  for (auto o : {Objective::kMoney, Objective::kDelay}) {
    EXPECT_EQ(best_system(p, {0.9, 0.1}, o).system, System::kKvCache) << to_string(o);
  }
}

TEST(BestSystem, TiesGoToLowerNumber) {
  CostParams p;
  p.S_model = p.S_kv = p.S_text = p.T_prefill = p.T_finetune = 1.0;
  const auto b = best_system(p, {0.0, 0.0}, Objective::kMoney);
  EXPECT_EQ(b.system, System::kFineTune);
  EXPECT_EQ(b.margin, 0.0);
}

TEST(Threshold, FixtureCrossingMatchesOracleAndBisection) {
  const auto p = fixture_params();
  const auto t = threshold_r1(p, Objective::kMoney, 0.05);
  EXPECT_EQ(t.kind, ThresholdKind::kCrossing);
  EXPECT_NEAR(t.r1, golden().at("cost_threshold_money").get<double>(), 1e-12);
  EXPECT_NEAR(t.r1, t.bisection, 1e-9);
  // Just past the threshold KV is cheaper, just before it is not.
  const auto kv_minus_ic = [&](double r1) {
    return per_query(System::kKvCache, p, {r1, 0.05}).money - per_query(System::kInContext, p, {r1, 0.05}).money;
  };
  EXPECT_GT(kv_minus_ic(t.r1 - 1e-6), 0.0);
  EXPECT_LT(kv_minus_ic(t.r1 + 1e-6), 0.0);
}

TEST(Threshold, WithoutNetworkPriceReducesToStorageVersusCompute) {
  auto p = fixture_params();
  p.C_net = 0.0;
  const auto t = threshold_r1(p, Objective::kMoney);
  const double expect = 1.0 / (1.0 + p.T_prefill * p.C_gpu / (p.S_kv * p.C_store));
  EXPECT_NEAR(t.r1, expect, 1e-15);
  EXPECT_NEAR(t.r1, golden().at("cost_threshold_money_no_net").get<double>(), 1e-12);
}

TEST(Threshold, FreeStorageAndNetworkIsAlways) {
  auto p = fixture_params();
  p.C_store = p.C_net = 0.0;
  const auto t = threshold_r1(p, Objective::kMoney);
  EXPECT_EQ(t.kind, ThresholdKind::kAlways);
  EXPECT_EQ(t.r1, 0.0);
}

TEST(Threshold, DelayWithTransferEqualToPrefillIsEqual) {
  auto p = fixture_params();
  p.B = p.S_kv / p.T_prefill;
  const auto t = threshold_r1(p, Objective::kDelay);
  EXPECT_EQ(t.kind, ThresholdKind::kEqual);
  EXPECT_TRUE(std::isnan(t.crossing));
}

TEST(Threshold, SlowLinkAndDomainEdges) {
  auto p = fixture_params();
  p.B = p.S_kv / (2 * p.T_prefill);  // transfer slower than prefill: ties only at r1 = 0
  const auto slow = threshold_r1(p, Objective::kDelay);
  EXPECT_EQ(slow.kind, ThresholdKind::kUntil);
  EXPECT_EQ(slow.crossing, 0.0);
  // Shipping the cache costs more than the prefill it saves.
  p.C_net = 1e-8;
  const auto never = threshold_r1(p, Objective::kMoney);
  EXPECT_EQ(never.kind, ThresholdKind::kNever);
  EXPECT_TRUE(std::isnan(never.r1));
  // The crossing moves out of a domain shrunk by r2.
  const auto base = fixture_params();
  EXPECT_EQ(threshold_r1(base, Objective::kMoney, 0.8).kind, ThresholdKind::kNever);
}

TEST(Threshold, PrintedDelayConventionMeetsOnlyAtFullReuse) {
  const auto p = fixture_params();
  Conventions printed;
  printed.swapped_delay_kv = true;
  const auto t = threshold_r1(p, Objective::kDelay, 0.0, printed);
  // KV - IC = (S_kv/B - T_prefill)(1 - r1): below zero, touching at r1 = 1.
  EXPECT_EQ(t.kind, ThresholdKind::kAlways);
  EXPECT_NEAR(t.crossing, 1.0, 1e-12);
  EXPECT_NEAR(t.intercept, p.S_kv / p.B - p.T_prefill, 1e-12);
}

TEST(Threshold, RandomParamsClosedFormMatchesBisection) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> logu(-3.0, 3.0);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    auto p = fixture_params();
    p.C_gpu *= std::pow(10.0, logu(rng));
    p.C_store *= std::pow(10.0, logu(rng));
    p.C_net *= std::pow(10.0, logu(rng));
    p.B *= std::pow(10.0, logu(rng));
    p.S_text *= std::pow(10.0, logu(rng));
    for (auto o : {Objective::kMoney, Objective::kDelay}) {
      const auto t = threshold_r1(p, o, 0.1);
      if (std::isnan(t.bisection)) continue;
      ++checked;
      EXPECT_NEAR(t.crossing, t.bisection, 1e-9);
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Comparison, TableRatios) {
  const auto r = comparison_report({"FT", 10, 0.0052, 2.63}, {"IC", 0, 0.0149, 10.91}, {"KDN", 0.25, 0.0059, 2.97});
  EXPECT_NEAR(r.inject_ratio, 40.0, 0.01);
  EXPECT_NEAR(r.cost_ratio, 2.53, 0.01);
  EXPECT_NEAR(r.delay_ratio, 3.67, 0.01);
  const auto& g = golden().at("comparison_ratios");
  EXPECT_DOUBLE_EQ(r.cost_ratio, g.at("cost").get<double>());
}

TEST(Comparison, IdenticalRowsAndZeroDivisor) {
  const MeasuredRow row{"x", 2, 0.5, 3};
  const auto same = comparison_report(row, row, row);
  EXPECT_EQ(same.inject_ratio, 1.0);
  EXPECT_EQ(same.cost_ratio, 1.0);
  EXPECT_EQ(same.delay_ratio, 1.0);
  const auto inf = comparison_report({"FT", 10, 1, 1}, {"IC", 0, 1, 1}, {"KDN", 0, 1, 1});
  EXPECT_TRUE(std::isinf(inf.inject_ratio));
  EXPECT_EQ(inf.to_json().at("inject_ratio"), "inf");
  EXPECT_THROW(comparison_report({"FT", -1, 1, 1}, row, row), Error);
}

TEST(Sweep, MarksTheCrossingRow) {
  const auto p = fixture_params();
  const auto spec = parse_sweep("r1=0:0.9:0.05");
  const auto rows = sweep(p, {0.0, 0.05}, spec, Objective::kMoney);
  ASSERT_EQ(rows.size(), 19u);
  const double r1_star = threshold_r1(p, Objective::kMoney, 0.05).r1;
  int marked = 0;
  for (const auto& row : rows) {
    if (!row.crossing) continue;
    ++marked;
    EXPECT_GE(row.mix.r1, r1_star);
    EXPECT_LT(row.mix.r1 - 0.05, r1_star);
  }
  EXPECT_EQ(marked, 1);
  // Rows past r1 + r2 = 1 are skipped.
  EXPECT_EQ(sweep(p, {0.0, 0.5}, spec, Objective::kMoney).size(), 11u);
}

TEST(Sweep, ParseErrors) {
  EXPECT_THROW(parse_sweep("r3=0:1:0.1"), Error);
  EXPECT_THROW(parse_sweep("r1=0:1"), Error);
  EXPECT_THROW(parse_sweep("r1=0:1:0"), Error);
  EXPECT_THROW(parse_sweep("r1=1:0:0.1"), Error);
  EXPECT_EQ(parse_sweep("r2=0:1:0.25").values().size(), 5u);
}

TEST(Json, StrictParamsDocument) {
  auto doc = params_doc();
  EXPECT_NO_THROW(params_from_json(doc));
  doc["C_gpus"] = 1.0;
  EXPECT_THROW(params_from_json(doc), Error);
  doc = params_doc();
  doc.erase("B");
  EXPECT_THROW(params_from_json(doc), Error);
  doc = params_doc();
  doc["T"] = "hour";
  EXPECT_THROW(params_from_json(doc), Error);
  doc = params_doc();
  doc.erase("T_Q");
  EXPECT_EQ(params_from_json(doc).T_Q, 0.0);
  EXPECT_EQ(params_from_json(params_to_json(fixture_params())).S_kv, fixture_params().S_kv);
}

}  // namespace
}  // namespace kdn::cost
