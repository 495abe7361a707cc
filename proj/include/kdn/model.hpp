// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace kdn {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

// Shape of a deterministic attention-only transformer. Weights are a pure
// function of these fields, so equal configs always build identical models.
struct ModelConfig {
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 2;
  std::uint32_t d_head = 4;
  std::uint32_t vocab_size = 32;
  double rope_base = 10000.0;

  std::uint32_t d_model() const { return n_heads * d_head; }

  // First 8 bytes (LE) of SHA-256 over the canonical field encoding.
  std::uint64_t model_id() const;

  // Throws kInvalidArgument: zero dims, odd d_head, n_heads > 16 (the weight
  // tag reserves 4 roles per head within 64 slots per layer), rope_base <= 1.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Closed-form projection weight, W[i][j] for tag = layer*64 + head*4 + role.
double closed_form_weight(std::uint32_t tag, std::uint32_t i, std::uint32_t j,
                          std::uint32_t fan_in);
// Closed-form token embedding E[v][j].
double closed_form_embedding(std::uint32_t token, std::uint32_t j);

enum class Role : std::uint32_t { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };

struct CacheGeometry {
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t d_head = 0;

  static CacheGeometry of(const ModelConfig& c) { return {c.n_layers, c.n_heads, c.d_head}; }
  std::size_t elements_per_token() const {
    return static_cast<std::size_t>(n_layers) * n_heads * d_head;
  }
  bool operator==(const CacheGeometry&) const = default;
};

// Per-layer, per-head K/V for a contiguous token range starting at start_pos.
// Keys are held before rotary rotation, so positions only materialize at
// attention time and rebasing is a metadata change.
class KvCache {
 public:
  KvCache() = default;
  KvCache(CacheGeometry geometry, std::size_t n_tokens, std::uint64_t start_pos = 0);

  const CacheGeometry& geometry() const { return geometry_; }
  std::size_t n_tokens() const { return n_tokens_; }
  std::uint64_t start_pos() const { return start_pos_; }
  void set_start_pos(std::uint64_t pos) { start_pos_ = pos; }

  std::span<float> k(std::size_t layer, std::size_t head, std::size_t token) {
    return {k_.data() + offset(layer, head, token), geometry_.d_head};
  }
  std::span<const float> k(std::size_t layer, std::size_t head, std::size_t token) const {
    return {k_.data() + offset(layer, head, token), geometry_.d_head};
  }
  std::span<float> v(std::size_t layer, std::size_t head, std::size_t token) {
    return {v_.data() + offset(layer, head, token), geometry_.d_head};
  }
  std::span<const float> v(std::size_t layer, std::size_t head, std::size_t token) const {
    return {v_.data() + offset(layer, head, token), geometry_.d_head};
  }

  // Flat (layer, head, token, dim) arrays.
  std::span<float> keys() { return k_; }
  std::span<const float> keys() const { return k_; }
  std::span<float> values() { return v_; }
  std::span<const float> values() const { return v_; }

  // Tokens [begin, end); start_pos advances by begin.
  KvCache slice(std::size_t begin, std::size_t end) const;
  // Concatenates along the token axis. The result starts at parts[0].start_pos.
  static KvCache concat(std::span<const KvCache> parts);

  bool all_finite() const;

  bool operator==(const KvCache&) const = default;

 private:
  std::size_t offset(std::size_t layer, std::size_t head, std::size_t token) const {
    return ((layer * geometry_.n_heads + head) * n_tokens_ + token) * geometry_.d_head;
  }

  CacheGeometry geometry_;
  std::size_t n_tokens_ = 0;
  std::uint64_t start_pos_ = 0;
  std::vector<float> k_;
  std::vector<float> v_;
};

// Residual stream after the final layer. Row i belongs to token offset + i of
// the paired cache; offset is nonzero only when earlier rows are unknown
// (e.g. a prefix restored from the store).
struct HiddenStates {
  std::size_t offset = 0;
  std::size_t d_model = 0;
  std::vector<double> data;

  std::size_t rows() const { return d_model == 0 ? 0 : data.size() / d_model; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * d_model, d_model}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * d_model, d_model}; }
};

struct PrefillResult {
  KvCache cache;
  HiddenStates states;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  CacheGeometry geometry() const { return CacheGeometry::of(config_); }

  std::span<const double> embedding(Token token) const {
    return {embedding_.data() + static_cast<std::size_t>(token) * d_model_, d_model_};
  }
  // Q/K/V: d_model x d_head, row-major [input][output].
  // O:     d_head x d_model, the head's slice of the output projection.
  std::span<const double> weight(std::size_t layer, std::size_t head, Role role) const;

  // Fills out[0..d_head) = x . W_role for one head.
  void project(std::size_t layer, std::size_t head, Role role, std::span<const double> x,
               std::span<double> out) const;

  // Rotary rotation of a d_head vector at absolute position pos, in place.
  void rotate(std::span<double> x, std::uint64_t pos) const;

  void check_tokens(std::span<const Token> tokens) const;

 private:
  ModelConfig config_;
  std::size_t d_model_;
  std::vector<double> embedding_;
  std::vector<std::vector<double>> weights_;  // [(layer*H + head)*4 + role]
  std::vector<double> inv_freq_;              // rope_base^(-2i/d_head)
};

PrefillResult prefill(const Model& model, std::span<const Token> tokens,
                      std::uint64_t start_pos = 0);

// Appends new_tokens to a cache produced by prefill/extend of the same model.
// prior_states must hold either every row of the cache or none; in the latter
// case the returned states cover only the new tokens.
PrefillResult extend(const Model& model, const KvCache& cache, const HiddenStates& prior_states,
                     std::span<const Token> new_tokens);

KvCache rebase(const KvCache& cache, std::uint64_t new_start);

}  // namespace kdn
