// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include "kdn/error.hpp"
#include "kdn/fixture.hpp"

namespace kdn {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.jsonl";
constexpr const char* kBlobDir = "blobs";

std::string blob_name(const ChunkKey& key, std::uint32_t version) {
  std::string name = std::string(kBlobDir) + "/" + key.hex();
  if (version > 0) name += ".v" + std::to_string(version);
  return name;
}

// Writes the whole buffer to fd, retrying short writes.
void write_all(int fd, const void* data, std::size_t len, const fs::path& path) {
  const auto* p = static_cast<const char*>(data);
  while (len > 0) {
    const ssize_t n = ::write(fd, p, len);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, "write " + path.string() + ": " + std::strerror(errno));
    }
    p += n;
    len -= static_cast<std::size_t>(n);
  }
}

class Fd {
 public:
  Fd(const fs::path& path, int flags) : fd_(::open(path.c_str(), flags | O_CLOEXEC, 0644)) {
    if (fd_ < 0) throw Error(ErrorCode::kIo, "open " + path.string() + ": " + std::strerror(errno));
  }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

void scale_value_rows(KvCache& cache, const json& params) {
  if (!params.is_object() || !params.contains("tokens") || !params.contains("factor") ||
      !params["tokens"].is_array() || !params["factor"].is_number()) {
    throw Error(ErrorCode::kInvalidArgument,
                "transform 1 expects {\"tokens\": [indices], \"factor\": number}");
  }
  const double factor = params["factor"].get<double>();
  std::vector<std::size_t> rows;
  for (const auto& t : params["tokens"]) {
    if (!t.is_number_integer() || t.get<std::int64_t>() < 0 ||
        t.get<std::uint64_t>() >= cache.n_tokens()) {
      throw Error(ErrorCode::kOutOfRange, "edit token index " + t.dump() + " outside chunk of " +
                                              std::to_string(cache.n_tokens()) + " tokens");
    }
    rows.push_back(t.get<std::size_t>());
  }
  const auto& g = cache.geometry();
  for (std::size_t l = 0; l < g.n_layers; ++l) {
    for (std::size_t h = 0; h < g.n_heads; ++h) {
      for (auto t : rows) {
        for (float& x : cache.v(l, h, t)) x = static_cast<float>(x * factor);
      }
    }
  }
}

json entry_record(const StoreEntry& e) {
  return json{{"key", e.key.hex()},
              {"mode", to_string(e.key.mode)},
              {"file", e.file},
              {"tokens", e.tokens},
              {"parent", e.parent ? json(e.parent->hex()) : json(nullptr)},
              {"codec", profile_to_json(e.codec)},
              {"size", e.size},
              {"pinned", e.pinned},
              {"created", e.created}};
}

}  // namespace

json profile_to_json(const CodecProfile& p) {
  return json{{"bits", p.quant_bits},
              {"group", p.group_size},
              {"stride", p.anchor_stride},
              {"lossless", static_cast<int>(p.lossless)}};
}

CodecProfile profile_from_json(const json& j) {
  CodecProfile p;
  p.quant_bits = j.at("bits").get<std::uint8_t>();
  p.group_size = j.at("group").get<std::uint32_t>();
  p.anchor_stride = j.at("stride").get<std::uint32_t>();
  p.lossless = static_cast<LosslessId>(j.at("lossless").get<std::uint8_t>());
  p.validate();
  return p;
}

std::size_t StoreTextResult::stored_count() const {
  return static_cast<std::size_t>(std::count(newly_stored.begin(), newly_stored.end(), true));
}

TransformRegistry::TransformRegistry() { add(kScaleValueRows, scale_value_rows); }

void TransformRegistry::add(std::uint32_t id, EditTransform transform) {
  transforms_[id] = std::move(transform);
}

const EditTransform& TransformRegistry::get(std::uint32_t id) const {
  auto it = transforms_.find(id);
  if (it == transforms_.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown edit transform " + std::to_string(id));
  }
  return it->second;
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n_tokens,
                                                              std::size_t chunk_size) {
  if (chunk_size == 0) throw Error(ErrorCode::kInvalidArgument, "chunk_size must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n_tokens; b += chunk_size) {
    out.emplace_back(b, std::min(n_tokens, b + chunk_size));
  }
  return out;
}

std::vector<ChunkKey> chunk_keys(std::uint64_t model_id, std::span<const Token> tokens,
                                 KeyMode mode, std::size_t chunk_size) {
  std::vector<ChunkKey> keys;
  std::optional<ChunkKey> parent;
  for (auto [b, e] : chunk_ranges(tokens.size(), chunk_size)) {
    keys.push_back(make_key(model_id, mode, parent, tokens.subspan(b, e - b)));
    if (mode == KeyMode::kChain) parent = keys.back();
  }
  return keys;
}

Store::Store(StoreConfig config, std::optional<FaultInjection> fault)
    : config_(std::move(config)), fault_(fault) {
  if (config_.capacity_bytes == 0) throw Error(ErrorCode::kInvalidArgument, "capacity must be > 0");
  if (config_.chunk_size == 0) throw Error(ErrorCode::kInvalidArgument, "chunk_size must be >= 1");
  if (!config_.on_warning) {
    config_.on_warning = [](const std::string& m) { std::clog << "kdn store: warning: " << m << '\n'; };
  }
  std::error_code ec;
  if (fs::exists(config_.root, ec) && !fs::is_directory(config_.root, ec)) {
    throw Error(ErrorCode::kIo, "store root " + config_.root.string() + " is not a directory");
  }
  fs::create_directories(config_.root / kBlobDir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create store root " + config_.root.string() + ": " +
                                    ec.message());
  }
  recover();
}

void Store::warn(const std::string& message) {
  warnings_.push_back(message);
  config_.on_warning(message);
}

std::vector<std::string> Store::warnings() const {
  std::lock_guard lock(mu_);
  return warnings_;
}

void Store::maybe_fail(FaultPoint point) {
  if (!fault_ || fault_->point != point) return;
  if (fault_->skip > 0) {
    --fault_->skip;
    return;
  }
  fault_.reset();
  throw SimulatedCrash{};
}

void Store::recover() {
  const auto manifest = config_.root / kManifest;
  if (fs::exists(manifest)) {
    const auto bytes = read_file(manifest);
    std::string text(bytes.begin(), bytes.end());
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      const bool terminated = end != std::string::npos;
      if (!terminated) end = text.size();
      ++line_no;
      const auto line = text.substr(start, end - start);
      if (!terminated) {
        warn("manifest line " + std::to_string(line_no) + ": torn record skipped");
      } else if (!line.empty()) {
        replay_line(line, line_no);
      }
      start = end + 1;
    }
    if (!text.empty() && text.back() != '\n') {
      // Seal the torn tail so the next append starts on a fresh line.
      Fd fd(manifest, O_WRONLY | O_APPEND);
      write_all(fd.get(), "\n", 1, manifest);
    }
  }

  std::vector<StoreEntry> missing;
  for (auto it = index_.begin(); it != index_.end();) {
    std::error_code ec;
    const auto size = fs::file_size(config_.root / it->second.file, ec);
    if (ec || size != it->second.size) {
      warn("entry " + it->second.key.hex() + ": blob " + it->second.file +
           (ec ? " missing" : " has wrong size") + ", dropping entry");
      missing.push_back(it->second);
      it = index_.erase(it);
    } else {
      ++it;
    }
  }
  for (const auto& e : missing) append_manifest(json{{"op", "evict"}, {"key", e.key.hex()}});

  total_bytes_ = 0;
  for (const auto& [_, e] : index_) total_bytes_ += e.size;
  collect_orphans();
}

void Store::replay_line(const std::string& line, std::size_t line_no) {
  const auto where = "manifest line " + std::to_string(line_no) + ": ";
  try {
    const auto rec = json::parse(line);
    const auto op = rec.value("op", std::string("put"));
    if (op == "put") {
      StoreEntry e;
      e.key = ChunkKey::from_hex(rec.at("key").get<std::string>(),
                                 parse_key_mode(rec.at("mode").get<std::string>()));
      e.file = rec.at("file").get<std::string>();
      e.tokens = rec.at("tokens").get<TokenSeq>();
      if (!rec.at("parent").is_null()) {
        e.parent = ChunkKey::from_hex(rec["parent"].get<std::string>(), KeyMode::kChain);
      }
      e.codec = profile_from_json(rec.at("codec"));
      e.size = rec.at("size").get<std::uint64_t>();
      e.pinned = rec.at("pinned").get<bool>();
      e.created = rec.at("created").get<std::int64_t>();
      e.last_access = ++clock_;
      index_[e.key.digest] = std::move(e);
      return;
    }
    const auto key = ChunkKey::from_hex(rec.at("key").get<std::string>(), KeyMode::kChain);
    auto it = index_.find(key.digest);
    if (op == "evict") {
      if (it != index_.end()) index_.erase(it);
    } else if (op == "pin") {
      if (it != index_.end()) it->second.pinned = rec.at("pinned").get<bool>();
    } else if (op == "edit") {
      if (it != index_.end()) {
        it->second.file = rec.at("file").get<std::string>();
        it->second.size = rec.at("size").get<std::uint64_t>();
        it->second.version = rec.at("version").get<std::uint32_t>();
        it->second.last_access = ++clock_;
      }
    } else {
      warn(where + "unknown op '" + op + "' skipped");
    }
  } catch (const std::exception& e) {
    warn(where + "corrupt record skipped (" + e.what() + ")");
  }
}

void Store::collect_orphans() {
  std::set<std::string> live;
  for (const auto& [_, e] : index_) live.insert(e.file);
  for (const auto& de : fs::directory_iterator(config_.root / kBlobDir)) {
    const auto rel = std::string(kBlobDir) + "/" + de.path().filename().string();
    if (!live.count(rel)) {
      std::error_code ec;
      fs::remove_all(de.path(), ec);
      warn("removed orphan blob " + rel);
    }
  }
}

void Store::write_blob(const std::string& file, ByteView data) {
  const auto path = config_.root / file;
  auto tmp = path;
  tmp += ".tmp";
  {
    Fd fd(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    write_all(fd.get(), data.data(), data.size(), tmp);
    if (config_.durable) ::fsync(fd.get());
  }
  maybe_fail(FaultPoint::kAfterTempWrite);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename " + tmp.string() + ": " + ec.message());
  maybe_fail(FaultPoint::kAfterBlobRename);
}

void Store::append_manifest(const json& record) {
  const auto path = config_.root / kManifest;
  const auto line = record.dump() + "\n";
  Fd fd(path, O_WRONLY | O_CREAT | O_APPEND);
  if (fault_ && fault_->point == FaultPoint::kTornManifestAppend) {
    if (fault_->skip > 0) {
      --fault_->skip;
    } else {
      const auto torn = std::min(fault_->torn_bytes, line.size() - 1);
      write_all(fd.get(), line.data(), torn, path);
      fault_.reset();
      throw SimulatedCrash{};
    }
  }
  // One write() per record: O_APPEND keeps concurrent appends whole.
  write_all(fd.get(), line.data(), line.size(), path);
  if (config_.durable) ::fdatasync(fd.get());
  maybe_fail(FaultPoint::kAfterManifestAppend);
}

void Store::remove_blob(const std::string& file) {
  std::error_code ec;
  fs::remove(config_.root / file, ec);
  if (ec) warn("cannot remove " + file + ": " + ec.message());
}

std::optional<CompressedChunk> Store::load(const StoreEntry& entry) {
  try {
    return parse_chunk(read_file(config_.root / entry.file));
  } catch (const Error& e) {
    std::lock_guard lock(mu_);
    warn("unreadable blob " + entry.file + ": " + e.what());
    return std::nullopt;
  }
}

void Store::touch(const ChunkKey& key) {
  std::lock_guard lock(mu_);
  auto it = index_.find(key.digest);
  if (it != index_.end()) it->second.last_access = ++clock_;
}

StoreTextResult Store::store_text(const Model& model, std::span<const Token> tokens, KeyMode mode,
                                  const CodecProfile& profile) {
  if (tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "store_text needs at least one token");
  profile.validate();
  model.check_tokens(tokens);
  std::lock_guard write_lock(write_mu_);

  const auto model_id = model.config().model_id();
  const auto ranges = chunk_ranges(tokens.size(), config_.chunk_size);
  StoreTextResult result;
  result.keys = chunk_keys(model_id, tokens, mode, config_.chunk_size);
  result.newly_stored.assign(result.keys.size(), false);
  {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < result.keys.size(); ++i) {
      auto it = index_.find(result.keys[i].digest);
      if (it == index_.end()) {
        result.newly_stored[i] = true;
      } else {
        it->second.last_access = ++clock_;
      }
    }
  }
  if (result.stored_count() == 0) return result;

  std::optional<PrefillResult> whole;
  if (mode == KeyMode::kChain) whole = prefill(model, tokens);

  struct Pending {
    StoreEntry entry;
    Bytes blob;
  };
  std::vector<Pending> pending;
  std::uint64_t new_bytes = 0;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (!result.newly_stored[i]) continue;
    const auto [b, e] = ranges[i];
    const auto chunk_tokens = tokens.subspan(b, e - b);
    const KvCache cache = mode == KeyMode::kChain ? whole->cache.slice(b, e)
                                                  : prefill(model, chunk_tokens).cache;
    Pending p;
    p.blob = serialize_chunk(compress_cache(cache, profile, result.keys[i]));
    p.entry.key = result.keys[i];
    p.entry.tokens.assign(chunk_tokens.begin(), chunk_tokens.end());
    if (mode == KeyMode::kChain && i > 0) p.entry.parent = result.keys[i - 1];
    p.entry.file = blob_name(p.entry.key, 0);
    p.entry.size = p.blob.size();
    p.entry.created = static_cast<std::int64_t>(std::time(nullptr));
    p.entry.codec = profile;
    new_bytes += p.entry.size;
    pending.push_back(std::move(p));
  }

  if (pinned_bytes() + new_bytes > config_.capacity_bytes) {
    throw Error(ErrorCode::kCapacity,
                "storing " + std::to_string(new_bytes) + " bytes exceeds capacity " +
                    std::to_string(config_.capacity_bytes) + " even after evicting every unpinned entry (" +
                    std::to_string(pinned_bytes()) + " bytes pinned)");
  }

  for (auto& p : pending) {
    write_blob(p.entry.file, p.blob);
    append_manifest(entry_record(p.entry));
    std::lock_guard lock(mu_);
    p.entry.last_access = ++clock_;
    total_bytes_ += p.entry.size;
    index_[p.entry.key.digest] = std::move(p.entry);
  }

  std::lock_guard lock(mu_);
  evict_locked(config_.capacity_bytes);
  return result;
}

RetrieveResult Store::retrieve_text(std::uint64_t model_id, std::span<const Token> tokens,
                                    KeyMode mode) {
  RetrieveResult result;
  const auto ranges = chunk_ranges(tokens.size(), config_.chunk_size);
  const auto keys = chunk_keys(model_id, tokens, mode, config_.chunk_size);
  std::size_t first_miss = ranges.size();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::optional<CompressedChunk> chunk;
    if (auto e = entry(keys[i])) {
      chunk = load(*e);
      // A chain hit must commit to the query's tokens; keys guarantee this
      // unless the blob was swapped underneath us.
      if (chunk && !(chunk->key == keys[i])) chunk.reset();
    }
    if (chunk) {
      touch(keys[i]);
      result.hits.push_back({keys[i], std::move(*chunk), ranges[i].first});
      continue;
    }
    first_miss = std::min(first_miss, i);
    result.missed_chunks.push_back(i);
    result.missing_keys.push_back(keys[i]);
    if (mode == KeyMode::kChain) break;
  }
  if (first_miss < ranges.size()) {
    result.miss_suffix.assign(tokens.begin() + static_cast<std::ptrdiff_t>(ranges[first_miss].first),
                              tokens.end());
  }
  return result;
}

std::optional<CompressedChunk> Store::get(const ChunkKey& key) {
  auto e = entry(key);
  if (!e) return std::nullopt;
  auto chunk = load(*e);
  if (chunk) touch(key);
  return chunk;
}

std::optional<StoreEntry> Store::entry(const ChunkKey& key) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(key.digest);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Store::contains(const ChunkKey& key) const { return entry(key).has_value(); }

std::vector<ChunkKey> Store::evict_to(std::uint64_t capacity) {
  std::lock_guard write_lock(write_mu_);
  std::lock_guard lock(mu_);
  return evict_locked(capacity);
}

std::vector<ChunkKey> Store::evict_locked(std::uint64_t capacity) {
  std::uint64_t pinned = 0;
  for (const auto& [_, e] : index_) {
    if (e.pinned) pinned += e.size;
  }
  if (pinned > capacity) {
    throw Error(ErrorCode::kCapacity, "capacity " + std::to_string(capacity) +
                                          " unreachable: " + std::to_string(pinned) +
                                          " bytes are pinned");
  }
  std::vector<const StoreEntry*> order;
  for (const auto& [_, e] : index_) {
    if (!e.pinned) order.push_back(&e);
  }
  std::sort(order.begin(), order.end(),
            [](const StoreEntry* a, const StoreEntry* b) { return a->last_access < b->last_access; });

  std::vector<ChunkKey> victims;
  for (const auto* e : order) {
    if (total_bytes_ <= capacity) break;
    victims.push_back(e->key);
    total_bytes_ -= e->size;
  }
  for (const auto& key : victims) {
    auto it = index_.find(key.digest);
    append_manifest(json{{"op", "evict"}, {"key", key.hex()}});
    const auto file = it->second.file;
    index_.erase(it);
    remove_blob(file);
  }
  return victims;
}

void Store::pin(const ChunkKey& key, bool pinned) {
  std::lock_guard write_lock(write_mu_);
  std::lock_guard lock(mu_);
  auto it = index_.find(key.digest);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "no entry for key " + key.hex());
  append_manifest(json{{"op", "pin"}, {"key", key.hex()}, {"pinned", pinned}});
  it->second.pinned = pinned;
}

std::uint32_t Store::apply_edit(const ChunkKey& key, std::uint32_t transform_id,
                                const json& params) {
  std::lock_guard write_lock(write_mu_);
  const auto& transform = transforms_.get(transform_id);
  auto current = entry(key);
  if (!current) throw Error(ErrorCode::kNotFound, "no entry for key " + key.hex());
  auto chunk = load(*current);
  if (!chunk) throw Error(ErrorCode::kCorrupt, "blob for " + key.hex() + " is unreadable");

  KvCache cache = decompress_cache(*chunk);
  transform(cache, params);
  if (!cache.all_finite()) {
    throw Error(ErrorCode::kNonFinite, "edit produced non-finite cache values");
  }
  const auto blob = serialize_chunk(compress_cache(cache, chunk->profile, chunk->key));

  const std::uint32_t version = current->version + 1;
  const auto file = blob_name(current->key, version);
  write_blob(file, blob);
  append_manifest(json{{"op", "edit"},
                       {"key", key.hex()},
                       {"file", file},
                       {"size", blob.size()},
                       {"version", version}});
  {
    std::lock_guard lock(mu_);
    auto& e = index_.at(key.digest);
    total_bytes_ = total_bytes_ - e.size + blob.size();
    e.file = file;
    e.size = blob.size();
    e.version = version;
    e.last_access = ++clock_;
  }
  remove_blob(current->file);

  std::lock_guard lock(mu_);
  evict_locked(config_.capacity_bytes);
  return version;
}

std::vector<StoreEntry> Store::list() const {
  std::lock_guard lock(mu_);
  std::vector<StoreEntry> out;
  for (const auto& [_, e] : index_) out.push_back(e);
  return out;
}

std::uint64_t Store::total_bytes() const {
  std::lock_guard lock(mu_);
  return total_bytes_;
}

std::uint64_t Store::pinned_bytes() const {
  std::lock_guard lock(mu_);
  std::uint64_t pinned = 0;
  for (const auto& [_, e] : index_) {
    if (e.pinned) pinned += e.size;
  }
  return pinned;
}

void Store::flush() {
  std::lock_guard write_lock(write_mu_);
  const auto path = config_.root / kManifest;
  if (!fs::exists(path)) return;
  Fd fd(path, O_WRONLY | O_APPEND);
  ::fsync(fd.get());
}

std::vector<std::string> Store::check_consistency() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> problems;
  std::set<std::string> live;
  std::uint64_t sum = 0;
  for (const auto& [_, e] : index_) {
    live.insert(e.file);
    sum += e.size;
    const auto path = config_.root / e.file;
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) {
      problems.push_back("dangling entry " + e.key.hex() + ": " + e.file + " missing");
      continue;
    }
    if (size != e.size) problems.push_back("size mismatch for " + e.file);
    try {
      const auto chunk = parse_chunk(read_file(path));
      if (!(chunk.key == e.key)) problems.push_back("blob " + e.file + " holds a different key");
    } catch (const Error& err) {
      problems.push_back("blob " + e.file + " unreadable: " + err.what());
    }
  }
  if (sum != total_bytes_) problems.push_back("byte accounting drift");
  for (const auto& de : fs::directory_iterator(config_.root / kBlobDir)) {
    const auto rel = std::string(kBlobDir) + "/" + de.path().filename().string();
    if (!live.count(rel)) problems.push_back("orphan file " + rel);
  }
  return problems;
}

}  // namespace kdn
