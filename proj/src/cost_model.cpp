// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/cost_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "kdn/error.hpp"

namespace kdn::cost {
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, msg);
}

struct Field {
  const char* name;
  double CostParams::*member;
};

constexpr Field kFields[] = {
    {"T", &CostParams::T},
    {"C_gpu", &CostParams::C_gpu},
    {"C_store", &CostParams::C_store},
    {"C_net", &CostParams::C_net},
    {"S_model", &CostParams::S_model},
    {"S_kv", &CostParams::S_kv},
    {"S_text", &CostParams::S_text},
    {"T_prefill", &CostParams::T_prefill},
    {"T_Q", &CostParams::T_Q},
    {"T_finetune", &CostParams::T_finetune},
    {"B", &CostParams::B},
};

bool is_price(const std::string& name) { return name.rfind("C_", 0) == 0; }

// Sign of KV - IC, with |x| below `tol` counted as zero.
int sign(double x, double tol) { return x > tol ? 1 : (x < -tol ? -1 : 0); }

}  // namespace

const char* to_string(System s) {
  switch (s) {
    case System::kFineTune: return "FT";
    case System::kInContext: return "IC";
    case System::kKvCache: return "KV";
  }
  return "?";
}

const char* to_string(Objective o) { return o == Objective::kMoney ? "money" : "delay"; }

Objective parse_objective(std::string_view name) {
  if (name == "money") return Objective::kMoney;
  if (name == "delay") return Objective::kDelay;
  throw Error(ErrorCode::kInvalidArgument, "objective must be money or delay, got '" +
                                               std::string(name) + "'");
}

const char* to_string(ThresholdKind k) {
  switch (k) {
    case ThresholdKind::kCrossing: return "crossing";
    case ThresholdKind::kAlways: return "always";
    case ThresholdKind::kUntil: return "until";
    case ThresholdKind::kNever: return "never";
    case ThresholdKind::kEqual: return "equal";
  }
  return "?";
}

void CostParams::validate() const {
  for (const auto& f : kFields) {
    const double v = this->*f.member;
    const std::string name = f.name;
    require(std::isfinite(v), name + " must be finite");
    if (name == "T_Q" || is_price(name)) {
      require(v >= 0.0, name + " must be >= 0");
    } else {
      require(v > 0.0, name + " must be > 0");
    }
  }
}

void WorkloadMix::validate() const {
  require(std::isfinite(r1) && std::isfinite(r2), "r1 and r2 must be finite");
  require(r1 >= 0.0 && r2 >= 0.0, "r1 and r2 must be >= 0");
  require(r1 + r2 <= 1.0 + 1e-12, "r1 + r2 must be <= 1");
}

json CostBreakdown::to_json() const {
  return json{{"gpu_seconds", gpu_seconds},
              {"storage_bytes", storage_bytes},
              {"network_bytes", network_bytes},
              {"delay_seconds", delay_seconds},
              {"money", money}};
}

double price(const CostParams& p, double gpu_seconds, double storage_bytes, double network_bytes) {
  return gpu_seconds * p.C_gpu + storage_bytes * p.C_store + network_bytes * p.C_net;
}

CostBreakdown per_query(System system, const CostParams& p, const WorkloadMix& mix,
                        const Conventions& conv) {
  p.validate();
  mix.validate();
  const double r1 = mix.r1;
  const double r2 = mix.r2;
  const double tq = conv.include_TQ ? p.T_Q : 0.0;
  CostBreakdown b;
  switch (system) {
    case System::kFineTune:
      b.gpu_seconds = r2 * p.T_finetune;
      b.storage_bytes = r2 * p.S_model;
      b.network_bytes = r2 * p.S_model;
      b.delay_seconds = r2 * p.T_finetune;
      break;
    case System::kInContext:
      b.gpu_seconds = p.T_prefill;
      b.network_bytes = p.S_text;
      b.delay_seconds = p.T_prefill;
      break;
    case System::kKvCache:
      b.gpu_seconds = (1.0 - r1) * p.T_prefill;
      b.storage_bytes = (1.0 - r1) * p.S_kv;
      b.network_bytes = r1 * p.S_kv;
      b.delay_seconds = conv.swapped_delay_kv ? r1 * p.T_prefill + (1.0 - r1) * p.S_kv / p.B
                                            : (1.0 - r1) * p.T_prefill + r1 * p.S_kv / p.B;
      break;
  }
  b.gpu_seconds += tq;
  b.delay_seconds += tq;
  b.money = price(p, b.gpu_seconds, b.storage_bytes, b.network_bytes);
  return b;
}

void validate_trace(const Trace& trace) {
  double prev = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double t = trace[i].time;
    require(std::isfinite(t) && t >= 0.0, "trace time at index " + std::to_string(i) +
                                              " must be finite and >= 0");
    require(t >= prev, "trace times must be nondecreasing (index " + std::to_string(i) + ")");
    prev = t;
  }
}

namespace {

enum class Seen { kThisPeriod, kNever, kEarlierPeriod };

// Classifies every query: seen earlier this period (r1), never seen (r2),
// or seen only in an earlier period.
std::vector<Seen> classify(const Trace& trace, double T) {
  require(std::isfinite(T) && T > 0.0, "refresh period T must be > 0");
  validate_trace(trace);
  std::vector<Seen> out;
  out.reserve(trace.size());
  std::unordered_set<std::uint64_t> ever;
  std::unordered_set<std::uint64_t> period_seen;
  double current = -1.0;
  for (const auto& q : trace) {
    const double period = std::floor(q.time / T);
    if (period != current) {
      period_seen.clear();
      current = period;
    }
    if (period_seen.count(q.context)) {
      out.push_back(Seen::kThisPeriod);
    } else if (!ever.count(q.context)) {
      out.push_back(Seen::kNever);
    } else {
      out.push_back(Seen::kEarlierPeriod);
    }
    period_seen.insert(q.context);
    ever.insert(q.context);
  }
  return out;
}

}  // namespace

WorkloadMix empirical_mix(const Trace& trace, double T) {
  const auto seen = classify(trace, T);
  if (seen.empty()) return {};
  const auto n = static_cast<double>(seen.size());
  const auto hits = static_cast<double>(std::count(seen.begin(), seen.end(), Seen::kThisPeriod));
  const auto fresh = static_cast<double>(std::count(seen.begin(), seen.end(), Seen::kNever));
  return {hits / n, fresh / n};
}

CostBreakdown simulate_trace(System system, const CostParams& p, const Trace& trace,
                             const Conventions& conv) {
  p.validate();
  const auto seen = classify(trace, p.T);
  if (seen.empty()) return {};
  const double tq = conv.include_TQ ? p.T_Q : 0.0;
  const double transfer = p.S_kv / p.B;
  long double gpu = 0, storage = 0, network = 0, delay = 0;
  for (const auto s : seen) {
    gpu += tq;
    delay += tq;
    switch (system) {
      case System::kFineTune:
        if (s == Seen::kNever) {
          gpu += p.T_finetune;
          storage += p.S_model;  // artifact kept from here on
          network += p.S_model;
          delay += p.T_finetune;
        }
        break;
      case System::kInContext:
        gpu += p.T_prefill;
        network += p.S_text;
        delay += p.T_prefill;
        break;
      case System::kKvCache:
        if (s == Seen::kThisPeriod) {
          network += p.S_kv;
          delay += conv.swapped_delay_kv ? p.T_prefill : transfer;
        } else {
          gpu += p.T_prefill;
          storage += p.S_kv;  // held until the period ends
          delay += conv.swapped_delay_kv ? transfer : p.T_prefill;
        }
        break;
    }
  }
  const auto n = static_cast<long double>(seen.size());
  CostBreakdown b;
  b.gpu_seconds = static_cast<double>(gpu / n);
  b.storage_bytes = static_cast<double>(storage / n);
  b.network_bytes = static_cast<double>(network / n);
  b.delay_seconds = static_cast<double>(delay / n);
  b.money = price(p, b.gpu_seconds, b.storage_bytes, b.network_bytes);
  return b;
}

Trace random_trace(std::mt19937_64& rng, std::size_t n_queries, std::size_t n_contexts,
                   std::size_t periods, double T) {
  require(n_contexts > 0 && periods > 0 && T > 0.0, "random_trace needs contexts, periods, T > 0");
  std::vector<double> weights(n_contexts);
  for (std::size_t k = 0; k < n_contexts; ++k) weights[k] = 1.0 / static_cast<double>(k + 1);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> when(0.0, static_cast<double>(periods) * T);
  Trace trace(n_queries);
  for (auto& q : trace) {
    q.time = when(rng);
    q.context = pick(rng);
  }
  std::sort(trace.begin(), trace.end(), [](const Query& a, const Query& b) { return a.time < b.time; });
  return trace;
}

BestSystem best_system(const CostParams& params, const WorkloadMix& mix, Objective objective,
                       const Conventions& conv) {
  BestSystem out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.values[i] = per_query(kSystems[i], params, mix, conv).objective(objective);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (out.values[i] < out.values[best]) best = i;
  }
  double runner_up = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 3; ++i) {
    if (i != best) runner_up = std::min(runner_up, out.values[i]);
  }
  out.system = kSystems[best];
  out.margin = runner_up - out.values[best];
  return out;
}

json Threshold::to_json() const {
  auto num = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
  return json{{"kind", to_string(kind)},     {"r1", num(r1)},
              {"crossing", num(crossing)},   {"bisection", num(bisection)},
              {"domain_max", domain_max},    {"intercept", intercept},
              {"slope", slope}};
}

double bisect_r1(const CostParams& params, Objective objective, double r2, double lo, double hi,
                 const Conventions& conv) {
  auto diff = [&](double r1) {
    return per_query(System::kKvCache, params, {r1, r2}, conv).objective(objective) -
           per_query(System::kInContext, params, {r1, r2}, conv).objective(objective);
  };
  const bool lo_wins = diff(lo) <= 0.0;
  require(lo_wins != (diff(hi) <= 0.0), "bisection interval does not bracket a crossing");
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if ((diff(mid) <= 0.0) == lo_wins) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Threshold threshold_r1(const CostParams& p, Objective objective, double r2,
                       const Conventions& conv) {
  p.validate();
  WorkloadMix{0.0, r2}.validate();
  Threshold t;
  t.domain_max = 1.0 - r2;
  double scale = 0.0;
  // KV - IC is affine in r1 and independent of r2; T_Q cancels.
  if (objective == Objective::kMoney) {
    t.intercept = p.S_kv * p.C_store - p.S_text * p.C_net;
    t.slope = p.S_kv * p.C_net - p.T_prefill * p.C_gpu - p.S_kv * p.C_store;
    scale = p.S_kv * p.C_store + p.S_text * p.C_net + p.S_kv * p.C_net + p.T_prefill * p.C_gpu;
  } else {
    const double transfer = p.S_kv / p.B;
    if (conv.swapped_delay_kv) {
      t.intercept = transfer - p.T_prefill;
      t.slope = p.T_prefill - transfer;
    } else {
      t.intercept = 0.0;
      t.slope = transfer - p.T_prefill;
    }
    scale = transfer + p.T_prefill;
  }
  const double tol = 1e-12 * scale;
  const double f0 = t.intercept;
  const double f1 = t.intercept + t.slope * t.domain_max;
  const int s0 = sign(f0, tol);
  const int s1 = sign(f1, tol);

  t.crossing = kNaN;
  t.bisection = kNaN;
  if (sign(t.slope, tol) != 0) {
    const double root = -t.intercept / t.slope;
    if (root >= 0.0 && root <= t.domain_max) t.crossing = root;
  }

  if (s0 == 0 && s1 == 0) {
    t.kind = ThresholdKind::kEqual;
    t.r1 = 0.0;
    t.crossing = kNaN;
  } else if (s0 <= 0 && s1 <= 0) {
    t.kind = ThresholdKind::kAlways;
    t.r1 = 0.0;
  } else if (s0 <= 0) {
    t.kind = ThresholdKind::kUntil;
    t.r1 = 0.0;
  } else if (s1 <= 0) {
    t.kind = ThresholdKind::kCrossing;
    t.r1 = t.crossing;
  } else {
    t.kind = ThresholdKind::kNever;
    t.r1 = kNaN;
  }

  if ((t.kind == ThresholdKind::kCrossing || t.kind == ThresholdKind::kUntil) && s0 != 0 &&
      s1 != 0) {
    t.bisection = bisect_r1(p, objective, r2, 0.0, t.domain_max, conv);
  }
  return t;
}

namespace {

double safe_ratio(double x, double y, const char* what) {
  require(std::isfinite(x) && std::isfinite(y) && x >= 0.0 && y >= 0.0,
          std::string(what) + " inputs must be finite and >= 0");
  if (y == 0.0) return x == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return x / y;
}

json row_json(const MeasuredRow& r) {
  return json{{"name", r.name}, {"inject_time", r.inject_time}, {"cost", r.cost}, {"delay", r.delay}};
}

}  // namespace

ComparisonReport comparison_report(const MeasuredRow& ft, const MeasuredRow& ic,
                                   const MeasuredRow& kdn) {
  for (const auto* r : {&ft, &ic, &kdn}) {
    require(std::isfinite(r->inject_time) && std::isfinite(r->cost) && std::isfinite(r->delay) &&
                r->inject_time >= 0.0 && r->cost >= 0.0 && r->delay >= 0.0,
            "row '" + r->name + "' has a negative or non-finite value");
  }
  ComparisonReport rep{ft, ic, kdn, 0, 0, 0};
  rep.inject_ratio = safe_ratio(ft.inject_time, kdn.inject_time, "inject");
  rep.cost_ratio = safe_ratio(ic.cost, kdn.cost, "cost");
  rep.delay_ratio = safe_ratio(ic.delay, kdn.delay, "delay");
  return rep;
}

json ComparisonReport::to_json() const {
  auto num = [](double x) { return std::isinf(x) ? json("inf") : json(x); };
  return json{{"rows", {row_json(ft), row_json(ic), row_json(kdn)}},
              {"inject_ratio", num(inject_ratio)},
              {"cost_ratio", num(cost_ratio)},
              {"delay_ratio", num(delay_ratio)}};
}

std::vector<double> SweepSpec::values() const {
  require(step > 0.0 && std::isfinite(step), "sweep step must be > 0");
  require(stop >= start, "sweep stop must be >= start");
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = start + static_cast<double>(i) * step;
  return out;
}

SweepSpec parse_sweep(std::string_view spec) {
  const auto bad = [&] {
    return Error(ErrorCode::kInvalidArgument,
                 "sweep must look like r1=start:stop:step, got '" + std::string(spec) + "'");
  };
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) throw bad();
  SweepSpec s;
  s.variable = std::string(spec.substr(0, eq));
  if (s.variable != "r1" && s.variable != "r2") throw bad();
  double parts[3];
  auto rest = spec.substr(eq + 1);
  for (int i = 0; i < 3; ++i) {
    const auto colon = rest.find(':');
    const auto tok = rest.substr(0, colon);
    if ((i < 2) == (colon == std::string_view::npos)) throw bad();
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), parts[i]);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) throw bad();
    rest = colon == std::string_view::npos ? std::string_view{} : rest.substr(colon + 1);
  }
  s.start = parts[0];
  s.stop = parts[1];
  s.step = parts[2];
  s.values();
  return s;
}

std::vector<SweepRow> sweep(const CostParams& params, const WorkloadMix& base,
                            const SweepSpec& spec, Objective objective, const Conventions& conv) {
  std::vector<SweepRow> rows;
  int prev_sign = 2;
  for (double v : spec.values()) {
    SweepRow row;
    row.mix = base;
    (spec.variable == "r1" ? row.mix.r1 : row.mix.r2) = v;
    if (row.mix.r1 < 0.0 || row.mix.r2 < 0.0 || row.mix.r1 + row.mix.r2 > 1.0 + 1e-12) continue;
    for (std::size_t i = 0; i < 3; ++i) row.systems[i] = per_query(kSystems[i], params, row.mix, conv);
    row.best = best_system(params, row.mix, objective, conv).system;
    const int s = row.systems[2].objective(objective) <= row.systems[1].objective(objective) ? -1 : 1;
    row.crossing = prev_sign != 2 && s != prev_sign;
    prev_sign = s;
    rows.push_back(row);
  }
  return rows;
}

CostParams params_from_json(const json& j) {
  require(j.is_object(), "cost parameters must be a JSON object");
  static const std::set<std::string> extras = {"r1", "r2", "include_TQ", "swapped_delay_kv"};
  std::map<std::string, double CostParams::*> members;
  for (const auto& f : kFields) members[f.name] = f.member;
  for (const auto& [key, _] : j.items()) {
    require(members.count(key) || extras.count(key), "unknown cost parameter '" + key + "'");
  }
  CostParams p;
  for (const auto& [name, member] : members) {
    if (!j.contains(name)) {
      require(name == "T_Q", "missing cost parameter '" + name + "'");
      p.T_Q = 0.0;
      continue;
    }
    require(j[name].is_number(), "cost parameter '" + name + "' must be a number");
    p.*member = j[name].get<double>();
  }
  p.validate();
  return p;
}

WorkloadMix mix_from_json(const json& j) {
  WorkloadMix m;
  if (j.contains("r1")) m.r1 = j["r1"].get<double>();
  if (j.contains("r2")) m.r2 = j["r2"].get<double>();
  m.validate();
  return m;
}

Conventions conventions_from_json(const json& j) {
  Conventions c;
  if (j.contains("include_TQ")) c.include_TQ = j["include_TQ"].get<bool>();
  if (j.contains("swapped_delay_kv")) c.swapped_delay_kv = j["swapped_delay_kv"].get<bool>();
  return c;
}

json params_to_json(const CostParams& p) {
  json j = json::object();
  for (const auto& f : kFields) j[f.name] = p.*f.member;
  return j;
}

}  // namespace kdn::cost
