// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace kdn::cost {

// FT: fine-tune the model on each context. IC: put the context text in every
// prompt. KV: serve stored KV caches, prefilling only on a store miss.
enum class System { kFineTune = 1, kInContext = 2, kKvCache = 3 };
inline constexpr std::array<System, 3> kSystems = {System::kFineTune, System::kInContext,
                                                   System::kKvCache};

const char* to_string(System s);

enum class Objective { kMoney, kDelay };
const char* to_string(Objective o);
Objective parse_objective(std::string_view name);

struct CostParams {
  double T = 3600.0;        // refresh period, s
  double C_gpu = 0.0;       // $ per GPU-second
  double C_store = 0.0;     // $ per byte per refresh period
  double C_net = 0.0;       // $ per byte transmitted
  double S_model = 0.0;     // bytes of fine-tune artifact per context
  double S_kv = 0.0;        // bytes of KV cache per context
  double S_text = 0.0;      // bytes of context text
  double T_prefill = 0.0;   // s to prefill one context
  double T_Q = 0.0;         // s to prefill the query
  double T_finetune = 0.0;  // s to fine-tune on one context
  double B = 1.0;           // bytes/s between storage and inference

  // Prices and T_Q finite and >= 0; every other field finite and > 0.
  void validate() const;
};

struct WorkloadMix {
  double r1 = 0.0;  // share of queries whose context was already seen this period
  double r2 = 0.0;  // share whose context was never seen before

  void validate() const;
};

struct Conventions {
  bool include_TQ = true;
  // KV delay as r1*T_prefill + (1-r1)*S_kv/B instead of the corrected
  // (1-r1)*T_prefill + r1*S_kv/B.
  bool swapped_delay_kv = false;
};

struct CostBreakdown {
  double gpu_seconds = 0.0;
  double storage_bytes = 0.0;
  double network_bytes = 0.0;
  double delay_seconds = 0.0;
  double money = 0.0;

  double objective(Objective o) const { return o == Objective::kMoney ? money : delay_seconds; }
  nlohmann::json to_json() const;
};

double price(const CostParams& p, double gpu_seconds, double storage_bytes, double network_bytes);

// Closed-form per-query averages.
CostBreakdown per_query(System system, const CostParams& params, const WorkloadMix& mix,
                        const Conventions& conv = {});

struct Query {
  double time = 0.0;
  std::uint64_t context = 0;
};
using Trace = std::vector<Query>;

// Times must be finite, >= 0 and nondecreasing.
void validate_trace(const Trace& trace);

// r1 and r2 as observed in the trace with refresh period T.
WorkloadMix empirical_mix(const Trace& trace, double T);

// Replays the trace query by query. The store is cleared at every multiple
// of T. FT fine-tunes a context the first time it is ever seen and keeps the
// artifact; KV prefills and stores on a miss in the current period and
// transfers on a hit. Returns averages per query.
CostBreakdown simulate_trace(System system, const CostParams& params, const Trace& trace,
                             const Conventions& conv = {});

// `periods` refresh periods with queries spread uniformly in time over
// `n_contexts` contexts drawn with a skewed popularity.
Trace random_trace(std::mt19937_64& rng, std::size_t n_queries, std::size_t n_contexts,
                   std::size_t periods, double T);

struct BestSystem {
  System system = System::kFineTune;
  double margin = 0.0;  // runner-up value minus best value, >= 0
  std::array<double, 3> values{};
};

// Ties go to the lower system number.
BestSystem best_system(const CostParams& params, const WorkloadMix& mix, Objective objective,
                       const Conventions& conv = {});

enum class ThresholdKind {
  kCrossing,  // KV > IC at r1 = 0, KV <= IC from r1* up
  kAlways,    // KV <= IC at r1 = 0 (and everywhere the difference does not grow)
  kUntil,     // KV <= IC only for r1 <= crossing
  kNever,     // KV > IC on the whole domain
  kEqual,     // identical for every r1
};
const char* to_string(ThresholdKind k);

struct Threshold {
  ThresholdKind kind = ThresholdKind::kNever;
  double r1 = 0.0;           // smallest r1 with KV <= IC; NaN for kNever
  double crossing = 0.0;     // root of KV - IC inside the domain, else NaN
  double bisection = 0.0;    // root found by bisection, else NaN
  double domain_max = 1.0;   // 1 - r2
  // KV - IC = intercept + slope * r1
  double intercept = 0.0;
  double slope = 0.0;

  nlohmann::json to_json() const;
};

// Threshold of KV over IC in r1 with r2 held fixed. Derived in closed form
// from the per-query expressions and cross-checked by bisection on
// per_query itself.
Threshold threshold_r1(const CostParams& params, Objective objective, double r2 = 0.0,
                       const Conventions& conv = {});

// Bisection on per_query(KV) - per_query(IC) over [lo, hi], which must
// bracket a sign change.
double bisect_r1(const CostParams& params, Objective objective, double r2, double lo, double hi,
                 const Conventions& conv = {});

struct MeasuredRow {
  std::string name;
  double inject_time = 0.0;  // time to add new knowledge, any unit shared by all rows
  double cost = 0.0;         // $ per query
  double delay = 0.0;        // s per query
};

struct ComparisonReport {
  MeasuredRow ft;
  MeasuredRow ic;
  MeasuredRow kdn;
  double inject_ratio = 0.0;  // FT / KDN; +inf when only KDN is zero
  double cost_ratio = 0.0;    // IC / KDN
  double delay_ratio = 0.0;   // IC / KDN

  nlohmann::json to_json() const;
};

// x / y with 0/0 = 1 and x/0 = +inf. Negative or non-finite inputs throw.
ComparisonReport comparison_report(const MeasuredRow& ft, const MeasuredRow& ic,
                                   const MeasuredRow& kdn);

// Grid "name=start:stop:step" over r1 or r2.
struct SweepSpec {
  std::string variable;
  double start = 0.0;
  double stop = 1.0;
  double step = 0.1;

  std::vector<double> values() const;
};
SweepSpec parse_sweep(std::string_view spec);

struct SweepRow {
  WorkloadMix mix;
  std::array<CostBreakdown, 3> systems;
  System best = System::kFineTune;
  bool crossing = false;  // first row at or past the KV/IC threshold
};

// Rows outside r1 + r2 <= 1 are skipped.
std::vector<SweepRow> sweep(const CostParams& params, const WorkloadMix& base,
                            const SweepSpec& spec, Objective objective,
                            const Conventions& conv = {});

// Flat JSON document: parameter fields by name, optional "r1", "r2",
// "include_TQ", "swapped_delay_kv".
CostParams params_from_json(const nlohmann::json& j);
WorkloadMix mix_from_json(const nlohmann::json& j);
Conventions conventions_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const CostParams& p);

}  // namespace kdn::cost
