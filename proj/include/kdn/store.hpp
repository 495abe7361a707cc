// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "kdn/chunk_key.hpp"
#include "kdn/codec.hpp"
#include "kdn/model.hpp"

namespace kdn {

struct StoreConfig {
  std::filesystem::path root;
  std::uint64_t capacity_bytes = std::uint64_t{1} << 30;
  std::uint32_t chunk_size = 64;
  // fsync blobs and manifest appends.
  bool durable = true;
  // Receives recovery and read-path warnings. Defaults to std::clog.
  std::function<void(const std::string&)> on_warning;
};

struct StoreEntry {
  ChunkKey key;
  TokenSeq tokens;
  std::optional<ChunkKey> parent;
  std::string file;  // relative to the store root
  std::uint64_t size = 0;
  bool pinned = false;
  std::uint64_t last_access = 0;  // logical clock, not persisted
  std::int64_t created = 0;       // unix seconds
  std::uint32_t version = 0;
  CodecProfile codec;
};

// Crash-injection points on the write path, in the order they are reached.
enum class FaultPoint {
  kAfterTempWrite,      // blob bytes written to <name>.tmp
  kAfterBlobRename,     // blob visible under its final name
  kTornManifestAppend,  // only the first torn_bytes of the record reach disk
  kAfterManifestAppend,
};

struct FaultInjection {
  FaultPoint point = FaultPoint::kAfterTempWrite;
  std::size_t skip = 0;        // hits of `point` to let through before firing
  std::size_t torn_bytes = 0;  // for kTornManifestAppend
};

// Thrown by an armed fault point. The Store must be discarded afterwards,
// as it would be after a real crash.
struct SimulatedCrash : std::exception {
  const char* what() const noexcept override { return "simulated crash"; }
};

struct StoreTextResult {
  std::vector<ChunkKey> keys;
  std::vector<bool> newly_stored;

  std::size_t stored_count() const;
};

struct ChunkHit {
  ChunkKey key;
  CompressedChunk chunk;
  std::size_t token_offset = 0;  // position of the chunk within the query
};

struct RetrieveResult {
  std::vector<ChunkHit> hits;
  // Chain: tokens after the longest stored prefix. Standalone: tokens from
  // the first missing chunk onward.
  TokenSeq miss_suffix;
  std::vector<std::size_t> missed_chunks;  // chunk indices within the query
  std::vector<ChunkKey> missing_keys;
};

using EditTransform = std::function<void(KvCache&, const nlohmann::json& params)>;

// Offline cache transforms addressable by id. Id 1 is built in: scale the V
// rows of params["tokens"] by params["factor"].
class TransformRegistry {
 public:
  TransformRegistry();
  void add(std::uint32_t id, EditTransform transform);
  const EditTransform& get(std::uint32_t id) const;

 private:
  std::map<std::uint32_t, EditTransform> transforms_;
};

inline constexpr std::uint32_t kScaleValueRows = 1;

// Token ranges [begin, end) of each chunk.
std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n_tokens,
                                                              std::size_t chunk_size);

// Chunk keys for `tokens` in the given mode, chained for kChain.
std::vector<ChunkKey> chunk_keys(std::uint64_t model_id, std::span<const Token> tokens,
                                 KeyMode mode, std::size_t chunk_size);

// Content-addressed, persisted store of compressed KV chunks.
//
// Layout: root/manifest.jsonl (append-only JSON Lines) and root/blobs/. A
// blob is written and renamed into place before its manifest record is
// appended, so a crash leaves at worst an orphan blob, which the next open
// removes. Readers may run concurrently; writers are serialized.
class Store {
 public:
  explicit Store(StoreConfig config, std::optional<FaultInjection> fault = std::nullopt);
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const StoreConfig& config() const { return config_; }

  StoreTextResult store_text(const Model& model, std::span<const Token> tokens, KeyMode mode,
                             const CodecProfile& profile);
  RetrieveResult retrieve_text(std::uint64_t model_id, std::span<const Token> tokens,
                               KeyMode mode);

  std::optional<CompressedChunk> get(const ChunkKey& key);
  std::optional<StoreEntry> entry(const ChunkKey& key) const;
  bool contains(const ChunkKey& key) const;

  // Removes unpinned entries in ascending last_access until the total is
  // within capacity. Throws kCapacity, without evicting, when pinned bytes
  // alone exceed it.
  std::vector<ChunkKey> evict_to(std::uint64_t capacity);
  void pin(const ChunkKey& key, bool pinned = true);

  // Decompress, transform, recompress with the same profile; the key keeps
  // its token association. Returns the new version number.
  std::uint32_t apply_edit(const ChunkKey& key, std::uint32_t transform_id,
                           const nlohmann::json& params);
  TransformRegistry& transforms() { return transforms_; }

  std::vector<StoreEntry> list() const;  // ordered by key
  std::uint64_t total_bytes() const;
  std::uint64_t pinned_bytes() const;
  void flush();

  // Empty when every live entry has a readable blob of the recorded size,
  // blobs/ holds nothing else, and the byte accounting adds up.
  std::vector<std::string> check_consistency() const;
  std::vector<std::string> warnings() const;

 private:
  void recover();
  void replay_line(const std::string& line, std::size_t line_no);
  void collect_orphans();
  void warn(const std::string& message);
  void maybe_fail(FaultPoint point);

  void write_blob(const std::string& file, ByteView data);
  void append_manifest(const nlohmann::json& record);
  void remove_blob(const std::string& file);
  std::optional<CompressedChunk> load(const StoreEntry& entry);
  std::vector<ChunkKey> evict_locked(std::uint64_t capacity);
  void touch(const ChunkKey& key);

  StoreConfig config_;
  std::optional<FaultInjection> fault_;
  TransformRegistry transforms_;

  mutable std::mutex mu_;     // index, clock, warnings, manifest
  std::mutex write_mu_;       // serializes mutating operations
  std::map<Sha256Digest, StoreEntry> index_;
  std::uint64_t clock_ = 0;
  std::uint64_t total_bytes_ = 0;
  std::vector<std::string> warnings_;
};

nlohmann::json profile_to_json(const CodecProfile& p);
CodecProfile profile_from_json(const nlohmann::json& j);

}  // namespace kdn
