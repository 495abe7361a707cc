// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kdn/bench.hpp"
#include "kdn/blender.hpp"
#include "kdn/cost_model.hpp"
#include "kdn/delivery.hpp"
#include "kdn/error.hpp"
#include "kdn/fixture.hpp"
#include "kdn/store.hpp"
#include "output.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using kdn::cli::Format;
using kdn::cli::num;
using kdn::cli::Report;
using kdn::cli::UsageError;

namespace {

constexpr std::uint16_t kDefaultPort = 7411;
constexpr std::uint64_t kDefaultSeed = 20240917;

std::atomic<kdn::TcpServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kdn::Error(kdn::ErrorCode::kIo, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path + ": invalid JSON: " + e.what());
  }
}

// A JSON file, inline JSON, or "default".
kdn::ModelConfig load_model(const std::string& arg) {
  if (arg.empty() || arg == "default") return {};
  const json j = arg.front() == '{' ? json::parse(arg) : load_json(arg);
  return kdn::model_config_from_json(j);
}

kdn::TokenSeq read_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kdn::Error(kdn::ErrorCode::kIo, "cannot open token file " + path);
  kdn::TokenSeq out;
  std::string word;
  while (in >> word) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size() || v < 0 || v > 0xffffffffLL) {
      throw UsageError(path + ": '" + word + "' is not a token id");
    }
    out.push_back(static_cast<kdn::Token>(v));
  }
  return out;
}

fs::path resolve_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KDN_ROOT"); env != nullptr && *env != '\0') return env;
  throw UsageError("no store root: pass --root or set KDN_ROOT");
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) return {s, kDefaultPort};
  const auto port = std::stoul(s.substr(colon + 1));
  if (port == 0 || port > 65535) throw UsageError("bad port in '" + s + "'");
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

kdn::KeyMode parse_mode(const std::string& s) {
  try {
    return kdn::parse_key_mode(s);
  } catch (const kdn::Error&) {
    throw UsageError("--mode must be chain or standalone");
  }
}

// ------------------------------------------------------------------ store

struct StoreFlags {
  std::string root;
  std::uint32_t chunk_size = 64;
  std::uint64_t capacity = std::uint64_t{1} << 30;

  kdn::StoreConfig config() const {
    kdn::StoreConfig c;
    c.root = resolve_root(root);
    c.chunk_size = chunk_size;
    c.capacity_bytes = capacity;
    c.on_warning = [](const std::string& m) { std::cerr << "kdn: warning: " << m << '\n'; };
    return c;
  }
};

void add_store_flags(CLI::App* cmd, StoreFlags& f) {
  cmd->add_option("--root", f.root, "Store directory (default $KDN_ROOT)");
  cmd->add_option("--chunk-size", f.chunk_size, "Tokens per chunk")->check(CLI::Range(1u, 1u << 20));
  cmd->add_option("--capacity", f.capacity, "Store capacity in bytes")->check(CLI::PositiveNumber);
}

struct TextFlags {
  std::string model = "default";
  std::string tokens;
  std::string mode = "chain";
};

void add_text_flags(CLI::App* cmd, TextFlags& f) {
  cmd->add_option("--model", f.model, "Model config: JSON file, inline JSON or 'default'");
  cmd->add_option("--tokens", f.tokens, "Whitespace-separated token ids")->required();
  cmd->add_option("--mode", f.mode, "chain | standalone");
}

Report put_command(const StoreFlags& sf, const TextFlags& tf, const std::string& profile_name) {
  const kdn::Model model(load_model(tf.model));
  const auto tokens = read_tokens(tf.tokens);
  const auto mode = parse_mode(tf.mode);
  const auto profile = kdn::parse_profile(profile_name);
  kdn::Store store(sf.config());
  const auto res = store.store_text(model, tokens, mode, profile);
  const auto ranges = kdn::chunk_ranges(tokens.size(), sf.chunk_size);

  Report r;
  r.header = {"chunk", "tokens", "key", "status"};
  r.doc["mode"] = tf.mode;
  r.doc["profile"] = profile.describe();
  r.doc["chunks"] = json::array();
  for (std::size_t i = 0; i < res.keys.size(); ++i) {
    const auto status = res.newly_stored[i] ? "stored" : "already stored";
    r.rows.push_back({std::to_string(i),
                      std::to_string(ranges[i].first) + "-" + std::to_string(ranges[i].second),
                      res.keys[i].hex(), status});
    r.doc["chunks"].push_back({{"index", i},
                               {"begin", ranges[i].first},
                               {"end", ranges[i].second},
                               {"key", res.keys[i].hex()},
                               {"stored", static_cast<bool>(res.newly_stored[i])}});
  }
  r.doc["stored"] = res.stored_count();
  r.doc["already_stored"] = res.keys.size() - res.stored_count();
  r.notes.push_back(std::to_string(res.stored_count()) + " stored, " +
                    std::to_string(res.keys.size() - res.stored_count()) + " already stored");
  return r;
}

Report get_command(const StoreFlags& sf, const TextFlags& tf, const std::string& server) {
  const kdn::Model model(load_model(tf.model));
  const auto tokens = read_tokens(tf.tokens);
  const auto mode = parse_mode(tf.mode);
  const auto model_id = model.config().model_id();
  const auto keys = kdn::chunk_keys(model_id, tokens, mode, sf.chunk_size);
  const auto ranges = kdn::chunk_ranges(tokens.size(), sf.chunk_size);

  std::vector<kdn::ChunkKey> hit_keys;
  kdn::TokenSeq miss_suffix;
  if (server.empty()) {
    kdn::Store store(sf.config());
    auto res = store.retrieve_text(model_id, tokens, mode);
    for (const auto& h : res.hits) hit_keys.push_back(h.key);
    miss_suffix = std::move(res.miss_suffix);
  } else {
    const auto [host, port] = parse_endpoint(server);
    auto conn = kdn::TcpConnection::connect(host, port);
    kdn::Client client(*conn);
    auto res = client.fetch(model_id, tokens, mode);
    for (const auto& c : res.chunks) hit_keys.push_back(c.chunk.key);
    miss_suffix = std::move(res.miss_suffix);
  }

  Report r;
  r.header = {"chunk", "tokens", "key", "status"};
  r.doc["mode"] = tf.mode;
  r.doc["chunks"] = json::array();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const bool hit = std::find(hit_keys.begin(), hit_keys.end(), keys[i]) != hit_keys.end();
    hits += hit;
    r.rows.push_back({std::to_string(i),
                      std::to_string(ranges[i].first) + "-" + std::to_string(ranges[i].second),
                      keys[i].hex(), hit ? "hit" : "miss"});
    r.doc["chunks"].push_back({{"index", i},
                               {"begin", ranges[i].first},
                               {"end", ranges[i].second},
                               {"key", keys[i].hex()},
                               {"hit", hit}});
  }
  r.doc["hits"] = hits;
  r.doc["miss_suffix"] = miss_suffix;
  std::ostringstream suffix;
  for (std::size_t i = 0; i < miss_suffix.size(); ++i) suffix << (i ? " " : "") << miss_suffix[i];
  r.notes.push_back(std::to_string(hits) + " of " + std::to_string(keys.size()) + " chunks hit");
  r.notes.push_back("miss_suffix (" + std::to_string(miss_suffix.size()) + " tokens): " + suffix.str());
  return r;
}

int serve_command(const StoreFlags& sf, const std::string& host, std::uint16_t port,
                  std::optional<double> bw) {
  kdn::Store store(sf.config());
  kdn::TcpServer server(store, {host, port, bw});
  g_server = &server;
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
  std::cout << "kdn: serving " << sf.config().root.string() << " on " << host << ":"
            << server.port() << std::endl;
  server.run();
  g_server = nullptr;
  return 0;
}

// ------------------------------------------------------------------ blend

Report blend_command(const std::string& request_path, const std::string& cache_out,
                     const std::string& report_out) {
  const json req = load_json(request_path);
  if (!req.is_object() || !req.contains("segments") || !req.contains("ratio")) {
    throw UsageError("blend request needs \"segments\" and \"ratio\"");
  }
  if (!req["ratio"].is_number()) throw UsageError("\"ratio\" must be a number");
  const double ratio = req["ratio"].get<double>();
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw UsageError("\"ratio\" must lie in [0, 1], got " + num(ratio));
  }
  const kdn::Model model(req.contains("model") ? kdn::model_config_from_json(req["model"])
                                               : kdn::ModelConfig{});
  std::vector<kdn::Segment> segments;
  try {
    for (const auto& s : req["segments"]) {
      segments.push_back(kdn::make_segment(model, s.get<kdn::TokenSeq>()));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("\"segments\" must be arrays of token ids: ") + e.what());
  }
  auto res = kdn::selective_blend(model, segments, ratio);

  if (!cache_out.empty()) {
    kdn::write_fixture(cache_out, {model.config(), res.cache, res.states});
  }
  json doc = res.report.to_json();
  doc["model"] = kdn::model_config_to_json(model.config());
  if (!report_out.empty()) {
    const auto text = doc.dump(2) + "\n";
    kdn::write_file_atomic(report_out, kdn::as_bytes(text));
  }

  Report r;
  r.doc = doc;
  r.header = {"ratio", "tokens", "selected", "kv_error", "final_state_error"};
  r.rows.push_back({num(ratio), std::to_string(res.report.n_tokens),
                    std::to_string(res.report.selected.size()), num(res.report.kv_error, "%.3e"),
                    num(res.report.final_state_error, "%.3e")});
  return r;
}

// ------------------------------------------------------------------ bench

Report bench_codec_command(const std::vector<std::string>& profiles, std::size_t n_tokens,
                           const std::string& fixture, const std::string& model_arg,
                           std::uint64_t seed) {
  for (const auto& p : profiles) {
    try {
      kdn::parse_profile(p);
    } catch (const kdn::Error& e) {
      throw UsageError(e.what());
    }
  }
  if (fixture != "smooth" && fixture != "model" && fixture != "all") {
    throw UsageError("--fixture must be smooth, model or all");
  }
  std::vector<std::pair<std::string, kdn::KvCache>> caches;
  if (fixture != "model") caches.emplace_back("smooth", kdn::smooth_fixture({2, 2, 8}, n_tokens));
  if (fixture != "smooth") {
    const kdn::Model model(load_model(model_arg));
    caches.emplace_back("model", kdn::model_fixture(model, n_tokens, seed));
  }

  Report r;
  r.header = {"fixture", "tokens", "profile", "ratio", "max_error", "bound", "encode_ms", "decode_ms"};
  r.doc["rows"] = json::array();
  for (const auto& [name, cache] : caches) {
    for (const auto& p : profiles) {
      const auto row = kdn::bench_codec(name, cache, p);
      r.rows.push_back({row.fixture, std::to_string(row.n_tokens), row.profile,
                        num(row.ratio, "%.2f"), num(row.max_abs_error, "%.3e"),
                        num(row.error_bound, "%.3e"), num(row.encode_ms, "%.2f"),
                        num(row.decode_ms, "%.2f")});
      r.doc["rows"].push_back(row.to_json());
    }
  }
  return r;
}

// ------------------------------------------------------------------ cost

namespace cost = kdn::cost;

struct CostInputs {
  cost::CostParams params;
  cost::WorkloadMix mix;
  cost::Conventions conv;
};

CostInputs load_cost(const std::string& path) {
  const json j = load_json(path);
  try {
    return {cost::params_from_json(j), cost::mix_from_json(j), cost::conventions_from_json(j)};
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

cost::Objective parse_objective(const std::string& s) {
  try {
    return cost::parse_objective(s);
  } catch (const kdn::Error& e) {
    throw UsageError(e.what());
  }
}

std::string ratio_text(double x, const char* fmt) {
  return std::isinf(x) ? std::string("inf") : num(x, fmt) + "x";
}

Report cost_report(const std::string& params_path, const std::string& measured_path,
                   const std::string& objective_name) {
  if (params_path.empty() && measured_path.empty()) {
    throw UsageError("cost report needs --params and/or --measured");
  }
  Report r;
  if (!params_path.empty()) {
    const auto in = load_cost(params_path);
    r.header = {"system", "gpu_s", "storage_B", "network_B", "delay_s", "money_$"};
    r.doc["mix"] = {{"r1", in.mix.r1}, {"r2", in.mix.r2}};
    r.doc["conventions"] = {{"include_TQ", in.conv.include_TQ},
                            {"swapped_delay_kv", in.conv.swapped_delay_kv}};
    r.doc["systems"] = json::object();
    for (auto s : cost::kSystems) {
      const auto b = cost::per_query(s, in.params, in.mix, in.conv);
      r.rows.push_back({cost::to_string(s), num(b.gpu_seconds), num(b.storage_bytes),
                        num(b.network_bytes), num(b.delay_seconds), num(b.money)});
      r.doc["systems"][cost::to_string(s)] = b.to_json();
    }
    r.notes.push_back("mix: r1=" + num(in.mix.r1) + " r2=" + num(in.mix.r2));
    std::vector<cost::Objective> objectives = {cost::Objective::kMoney, cost::Objective::kDelay};
    if (!objective_name.empty()) objectives = {parse_objective(objective_name)};
    for (auto o : objectives) {
      const auto best = cost::best_system(in.params, in.mix, o, in.conv);
      const auto th = cost::threshold_r1(in.params, o, in.mix.r2, in.conv);
      r.doc["best"][cost::to_string(o)] = {{"system", cost::to_string(best.system)},
                                           {"margin", best.margin}};
      r.doc["threshold_r1"][cost::to_string(o)] = th.to_json();
      r.notes.push_back(std::string("best (") + cost::to_string(o) + "): " +
                        cost::to_string(best.system) + ", margin " + num(best.margin) +
                        "; KV vs IC threshold: " + cost::to_string(th.kind) +
                        (std::isnan(th.r1) ? "" : " r1*=" + num(th.r1)));
    }
  }
  if (!measured_path.empty()) {
    const json m = load_json(measured_path);
    auto row = [&](const char* name) {
      if (!m.contains(name)) throw UsageError(measured_path + ": missing row \"" + name + "\"");
      const auto& j = m[name];
      try {
        return cost::MeasuredRow{name, j.at("inject_time").get<double>(), j.at("cost").get<double>(),
                                 j.at("delay").get<double>()};
      } catch (const json::exception& e) {
        throw UsageError(measured_path + ": row " + name + ": " + e.what());
      }
    };
    const auto rep = cost::comparison_report(row("FT"), row("IC"), row("KDN"));
    const std::string unit = m.value("inject_unit", "h");
    Report t;
    t.header = {"system", "inject_" + unit, "cost_$", "delay_s"};
    for (const auto* x : {&rep.ft, &rep.ic, &rep.kdn}) {
      t.rows.push_back({x->name, num(x->inject_time), num(x->cost), num(x->delay)});
    }
    const std::string line = "inject " + ratio_text(rep.inject_ratio, "%.1f") + ", cost " +
                             ratio_text(rep.cost_ratio, "%.2f") + ", delay " +
                             ratio_text(rep.delay_ratio, "%.2f");
    if (r.header.empty()) {
      r.header = t.header;
      r.rows = t.rows;
    } else {
      r.notes.push_back("");
      std::ostringstream os;
      t.print(Format::kText, os);
      std::string l;
      std::istringstream is(os.str());
      while (std::getline(is, l)) r.notes.push_back(l);
    }
    r.notes.push_back(line);
    r.doc["comparison"] = rep.to_json();
  }
  return r;
}

Report cost_sweep(const std::string& params_path, const std::string& spec,
                  const std::string& objective_name) {
  const auto in = load_cost(params_path);
  cost::SweepSpec sw;
  try {
    sw = cost::parse_sweep(spec);
  } catch (const kdn::Error& e) {
    throw UsageError(e.what());
  }
  const auto o = parse_objective(objective_name);
  const auto rows = cost::sweep(in.params, in.mix, sw, o, in.conv);
  const auto th = cost::threshold_r1(in.params, o, in.mix.r2, in.conv);

  Report r;
  r.header = {"r1", "r2", "FT", "IC", "KV", "best", "crossing"};
  r.doc["objective"] = cost::to_string(o);
  r.doc["threshold_r1"] = th.to_json();
  r.doc["rows"] = json::array();
  for (const auto& row : rows) {
    r.rows.push_back({num(row.mix.r1), num(row.mix.r2), num(row.systems[0].objective(o)),
                      num(row.systems[1].objective(o)), num(row.systems[2].objective(o)),
                      cost::to_string(row.best), row.crossing ? "*" : ""});
    r.doc["rows"].push_back({{"r1", row.mix.r1},
                             {"r2", row.mix.r2},
                             {"FT", row.systems[0].objective(o)},
                             {"IC", row.systems[1].objective(o)},
                             {"KV", row.systems[2].objective(o)},
                             {"best", cost::to_string(row.best)},
                             {"crossing", row.crossing}});
  }
  r.notes.push_back("KV vs IC threshold (" + std::string(cost::to_string(o)) + "): " +
                    cost::to_string(th.kind) + (std::isnan(th.r1) ? "" : " r1*=" + num(th.r1, "%.9g")));
  return r;
}

cost::Trace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kdn::Error(kdn::ErrorCode::kIo, "cannot open trace " + path);
  cost::Trace trace;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    cost::Query q;
    if (!(is >> q.time >> q.context)) {
      throw UsageError(path + ":" + std::to_string(n) + ": expected 'time context'");
    }
    trace.push_back(q);
  }
  return trace;
}

Report cost_simulate(const std::string& params_path, const std::string& trace_path,
                     std::size_t queries, std::size_t contexts, std::size_t periods,
                     std::uint64_t seed) {
  const auto in = load_cost(params_path);
  cost::Trace trace;
  if (!trace_path.empty()) {
    trace = read_trace(trace_path);
  } else {
    std::mt19937_64 rng(seed);
    trace = cost::random_trace(rng, queries, contexts, periods, in.params.T);
  }
  const auto mix = cost::empirical_mix(trace, in.params.T);

  Report r;
  r.header = {"system", "field", "closed_form", "simulated", "rel_diff"};
  r.doc["queries"] = trace.size();
  r.doc["mix"] = {{"r1", mix.r1}, {"r2", mix.r2}};
  r.doc["systems"] = json::object();
  double worst = 0.0;
  for (auto s : cost::kSystems) {
    const auto closed = cost::per_query(s, in.params, mix, in.conv).to_json();
    const auto sim = cost::simulate_trace(s, in.params, trace, in.conv).to_json();
    json diffs = json::object();
    for (const auto& [field, value] : closed.items()) {
      const double a = value.get<double>();
      const double b = sim[field].get<double>();
      const double scale = std::max(std::abs(a), std::abs(b));
      const double d = scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
      worst = std::max(worst, d);
      diffs[field] = d;
      r.rows.push_back({cost::to_string(s), field, num(a, "%.12g"), num(b, "%.12g"), num(d, "%.2e")});
    }
    r.doc["systems"][cost::to_string(s)] = {{"closed_form", closed}, {"simulated", sim}, {"rel_diff", diffs}};
  }
  r.doc["max_rel_diff"] = worst;
  r.notes.push_back(std::to_string(trace.size()) + " queries, empirical r1=" + num(mix.r1) +
                    " r2=" + num(mix.r2) + ", max rel diff " + num(worst, "%.2e"));
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge delivery network: KV cache store, delivery, blending and cost model"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string output = "text";
  std::uint64_t seed = kDefaultSeed;
  app.add_option("--output", output, "text | csv | json")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  app.add_option("--seed", seed, "Seed for randomized inputs");

  StoreFlags store_flags;

  auto* serve = app.add_subcommand("serve", "Serve a store over TCP");
  add_store_flags(serve, store_flags);
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
  std::optional<double> bw;
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port (0 picks a free one)");
  serve->add_option("--bw", bw, "Pace responses to BYTES/S")->check(CLI::PositiveNumber);

  TextFlags text_flags;
  std::string profile = "q8-deflate";
  auto* put = app.add_subcommand("put", "Prefill tokens and store their KV chunks");
  add_store_flags(put, store_flags);
  add_text_flags(put, text_flags);
  put->add_option("--profile", profile, "Codec profile");

  std::string server;
  auto* get = app.add_subcommand("get", "Look up stored chunks for tokens");
  add_store_flags(get, store_flags);
  add_text_flags(get, text_flags);
  get->add_option("--server", server, "HOST[:PORT] of a running server (default: local store)");

  std::string request, cache_out, report_out;
  auto* blend = app.add_subcommand("blend", "Blend standalone segment caches");
  blend->add_option("--request", request, "Blend request JSON")->required();
  blend->add_option("--cache-out", cache_out, "Write the blended cache fixture here");
  blend->add_option("--report-out", report_out, "Write the BlendReport JSON here");

  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* bench_codec = bench->add_subcommand("codec", "Compression ratio and error per profile");
  std::vector<std::string> profiles = {"raw", "q8-raw", "q8-raw-wide", "q8-deflate", "q4-deflate"};
  std::size_t bench_tokens = 512;
  std::string fixture = "all";
  std::string bench_model = "default";
  bench_codec->add_option("--profile", profiles, "Codec profile (repeatable)");
  bench_codec->add_option("--tokens", bench_tokens, "Fixture length")->check(CLI::Range(1, 1 << 16));
  bench_codec->add_option("--fixture", fixture, "smooth | model | all");
  bench_codec->add_option("--model", bench_model, "Model config for the model fixture");

  auto* cost_cmd = app.add_subcommand("cost", "Cost model");
  cost_cmd->require_subcommand(1);
  std::string params, measured, objective, sweep_spec;
  auto* report = cost_cmd->add_subcommand("report", "Per-query costs and table ratios");
  report->add_option("--params", params, "Cost parameter JSON");
  report->add_option("--measured", measured, "Measured rows JSON (FT, IC, KDN)");
  report->add_option("--objective", objective, "money | delay (default both)");
  auto* sweep = cost_cmd->add_subcommand("sweep", "Objective over a grid of r1 or r2");
  sweep->add_option("--params", params, "Cost parameter JSON")->required();
  sweep->add_option("--sweep", sweep_spec, "r1=start:stop:step")->required();
  std::string sweep_objective = "money";
  sweep->add_option("--objective", sweep_objective, "money | delay");
  auto* simulate = cost_cmd->add_subcommand("simulate", "Trace replay vs closed form");
  std::string trace;
  std::size_t queries = 2000, contexts = 64, periods = 4;
  simulate->add_option("--params", params, "Cost parameter JSON")->required();
  simulate->add_option("--trace", trace, "Lines of 'time context' (default: random trace)");
  simulate->add_option("--queries", queries, "Random trace length")->check(CLI::Range(1, 1 << 24));
  simulate->add_option("--contexts", contexts, "Random trace contexts")->check(CLI::Range(1, 1 << 24));
  simulate->add_option("--periods", periods, "Random trace refresh periods")->check(CLI::Range(1, 1 << 20));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "kdn: usage error: " << e.what() << '\n';
    return 2;
  }

  const Format format = output == "json" ? Format::kJson : output == "csv" ? Format::kCsv : Format::kText;
  try {
    Report r;
    if (*serve) return serve_command(store_flags, host, port, bw);
    if (*put) r = put_command(store_flags, text_flags, profile);
    if (*get) r = get_command(store_flags, text_flags, server);
    if (*blend) r = blend_command(request, cache_out, report_out);
    if (*bench_codec) r = bench_codec_command(profiles, bench_tokens, fixture, bench_model, seed);
    if (*report) r = cost_report(params, measured, objective);
    if (*sweep) r = cost_sweep(params, sweep_spec, sweep_objective);
    if (*simulate) r = cost_simulate(params, trace, queries, contexts, periods, seed);
    r.print(format);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "kdn: usage error: " << e.what() << '\n';
    return 2;
  } catch (const kdn::Error& e) {
    const bool usage = e.code() == kdn::ErrorCode::kInvalidArgument ||
                       e.code() == kdn::ErrorCode::kUnknownCodec ||
                       e.code() == kdn::ErrorCode::kOutOfRange;
    std::cerr << "kdn: " << (usage ? "usage error: " : "error: ") << e.what() << '\n';
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "kdn: error: " << e.what() << '\n';
    return 1;
  }
}
