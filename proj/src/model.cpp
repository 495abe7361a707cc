// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kdn/bytes.hpp"
#include "kdn/checksum.hpp"
#include "kdn/detail/attention.hpp"
#include "kdn/error.hpp"

namespace kdn {

std::uint64_t ModelConfig::model_id() const {
  Bytes canon;
  ByteWriter w(canon);
  w.put_str("KDNMODEL1");
  w.put(n_layers);
  w.put(n_heads);
  w.put(d_head);
  w.put(vocab_size);
  w.put_f64(rope_base);
  auto digest = sha256(canon);
  ByteReader r(digest);
  return r.get<std::uint64_t>();
}

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_head == 0 || vocab_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be nonzero");
  }
  if (d_head % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "d_head must be even for pairwise rotary rotation, got " + std::to_string(d_head));
  }
  if (n_heads > 16) {
    throw Error(ErrorCode::kInvalidArgument, "at most 16 heads are addressable by the weight tag");
  }
  if (!(rope_base > 1.0) || !std::isfinite(rope_base)) {
    throw Error(ErrorCode::kInvalidArgument, "rope_base must be finite and > 1");
  }
}

double closed_form_weight(std::uint32_t tag, std::uint32_t i, std::uint32_t j,
                          std::uint32_t fan_in) {
  const auto arg = 977.0 * tag + 131.0 * i + 7.0 * j + 1.0;
  return 0.5 * std::sin(0.37 * arg) / std::sqrt(static_cast<double>(fan_in));
}

double closed_form_embedding(std::uint32_t token, std::uint32_t j) {
  return std::sin(0.61 * (31.0 * token + j + 1.0));
}

KvCache::KvCache(CacheGeometry geometry, std::size_t n_tokens, std::uint64_t start_pos)
    : geometry_(geometry),
      n_tokens_(n_tokens),
      start_pos_(start_pos),
      k_(geometry.elements_per_token() * n_tokens, 0.0f),
      v_(geometry.elements_per_token() * n_tokens, 0.0f) {}

KvCache KvCache::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n_tokens_) {
    throw Error(ErrorCode::kOutOfRange, "cache slice [" + std::to_string(begin) + ", " +
                                            std::to_string(end) + ") outside " +
                                            std::to_string(n_tokens_) + " tokens");
  }
  KvCache out(geometry_, end - begin, start_pos_ + begin);
  const std::size_t row = geometry_.d_head;
  for (std::size_t l = 0; l < geometry_.n_layers; ++l) {
    for (std::size_t h = 0; h < geometry_.n_heads; ++h) {
      if (end == begin) continue;
      std::copy_n(k(l, h, begin).data(), (end - begin) * row, out.k(l, h, 0).data());
      std::copy_n(v(l, h, begin).data(), (end - begin) * row, out.v(l, h, 0).data());
    }
  }
  return out;
}

KvCache KvCache::concat(std::span<const KvCache> parts) {
  if (parts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "concat of zero caches");
  }
  const auto geometry = parts.front().geometry();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (!(p.geometry() == geometry)) {
      throw Error(ErrorCode::kGeometryMismatch, "concat of caches with different geometry");
    }
    total += p.n_tokens();
  }
  KvCache out(geometry, total, parts.front().start_pos());
  const std::size_t row = geometry.d_head;
  for (std::size_t l = 0; l < geometry.n_layers; ++l) {
    for (std::size_t h = 0; h < geometry.n_heads; ++h) {
      std::size_t at = 0;
      for (const auto& p : parts) {
        if (p.n_tokens() == 0) continue;
        std::copy_n(p.k(l, h, 0).data(), p.n_tokens() * row, out.k(l, h, at).data());
        std::copy_n(p.v(l, h, 0).data(), p.n_tokens() * row, out.v(l, h, at).data());
        at += p.n_tokens();
      }
    }
  }
  return out;
}

bool KvCache::all_finite() const {
  auto finite = [](float f) { return std::isfinite(f); };
  return std::all_of(k_.begin(), k_.end(), finite) && std::all_of(v_.begin(), v_.end(), finite);
}

Model::Model(ModelConfig config) : config_(config) {
  config_.validate();
  d_model_ = config_.d_model();
  const std::uint32_t dm = config_.d_model();
  const std::uint32_t dh = config_.d_head;

  embedding_.resize(static_cast<std::size_t>(config_.vocab_size) * dm);
  for (std::uint32_t v = 0; v < config_.vocab_size; ++v) {
    for (std::uint32_t j = 0; j < dm; ++j) {
      embedding_[static_cast<std::size_t>(v) * dm + j] = closed_form_embedding(v, j);
    }
  }

  // Every projection has fan-in d_model: Q/K/V read the full residual and the
  // output projection reads the concatenation of all heads.
  weights_.resize(static_cast<std::size_t>(config_.n_layers) * config_.n_heads * 4);
  for (std::uint32_t l = 0; l < config_.n_layers; ++l) {
    for (std::uint32_t h = 0; h < config_.n_heads; ++h) {
      for (std::uint32_t role = 0; role < 4; ++role) {
        const std::uint32_t tag = l * 64 + h * 4 + role;
        const std::uint32_t rows = role == 3 ? dh : dm;
        const std::uint32_t cols = role == 3 ? dm : dh;
        auto& w = weights_[(static_cast<std::size_t>(l) * config_.n_heads + h) * 4 + role];
        w.resize(static_cast<std::size_t>(rows) * cols);
        for (std::uint32_t i = 0; i < rows; ++i) {
          for (std::uint32_t j = 0; j < cols; ++j) {
            w[static_cast<std::size_t>(i) * cols + j] = closed_form_weight(tag, i, j, dm);
          }
        }
      }
    }
  }

  inv_freq_.resize(dh / 2);
  for (std::uint32_t i = 0; i < dh / 2; ++i) {
    inv_freq_[i] = std::pow(config_.rope_base, -2.0 * i / dh);
  }
}

std::span<const double> Model::weight(std::size_t layer, std::size_t head, Role role) const {
  return weights_[(layer * config_.n_heads + head) * 4 + static_cast<std::size_t>(role)];
}

void Model::project(std::size_t layer, std::size_t head, Role role, std::span<const double> x,
                    std::span<double> out) const {
  const auto w = weight(layer, head, role);
  const std::size_t dh = config_.d_head;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < d_model_; ++i) {
    const double xi = x[i];
    const double* wr = w.data() + i * dh;
    for (std::size_t j = 0; j < dh; ++j) out[j] += xi * wr[j];
  }
}

void Model::rotate(std::span<double> x, std::uint64_t pos) const {
  const double p = static_cast<double>(pos);
  for (std::size_t i = 0; i < inv_freq_.size(); ++i) {
    const double angle = p * inv_freq_[i];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double a = x[2 * i];
    const double b = x[2 * i + 1];
    x[2 * i] = a * c - b * s;
    x[2 * i + 1] = a * s + b * c;
  }
}

void Model::check_tokens(std::span<const Token> tokens) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) {
      throw Error(ErrorCode::kOutOfRange, "token id " + std::to_string(tokens[i]) + " at index " +
                                              std::to_string(i) + " outside vocabulary of " +
                                              std::to_string(config_.vocab_size));
    }
  }
}

namespace detail {

void layer_forward(const Model& model, KvCache& cache, std::size_t layer,
                   std::span<const std::size_t> rows, std::span<double> x) {
  const auto& cfg = model.config();
  const std::size_t dh = cfg.d_head;
  const std::size_t dm = cfg.d_model();
  const std::size_t n = cache.n_tokens();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> delta(rows.size() * dm, 0.0);
  std::vector<double> tmp(dh);
  std::vector<double> keys_rot(n * dh);
  std::vector<double> q(dh);
  std::vector<double> head_out(dh);
  std::vector<double> scores(n);

  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto xr = x.subspan(r * dm, dm);
      model.project(layer, h, Role::kKey, xr, tmp);
      std::transform(tmp.begin(), tmp.end(), cache.k(layer, h, rows[r]).begin(),
                     [](double d) { return static_cast<float>(d); });
      model.project(layer, h, Role::kValue, xr, tmp);
      std::transform(tmp.begin(), tmp.end(), cache.v(layer, h, rows[r]).begin(),
                     [](double d) { return static_cast<float>(d); });
    }

    const std::size_t last = rows.empty() ? 0 : rows.back() + 1;
    for (std::size_t t = 0; t < last; ++t) {
      auto kr = std::span<double>(keys_rot).subspan(t * dh, dh);
      const auto stored = cache.k(layer, h, t);
      std::copy(stored.begin(), stored.end(), kr.begin());
      model.rotate(kr, cache.start_pos() + t);
    }

    const auto wo = model.weight(layer, h, Role::kOutput);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t t = rows[r];
      model.project(layer, h, Role::kQuery, x.subspan(r * dm, dm), q);
      model.rotate(q, cache.start_pos() + t);

      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        const double* kr = keys_rot.data() + s * dh;
        for (std::size_t c = 0; c < dh; ++c) dot += q[c] * kr[c];
        scores[s] = dot * inv_sqrt_d;
        max_score = std::max(max_score, scores[s]);
      }
      double denom = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - max_score);
        denom += scores[s];
      }
      std::fill(head_out.begin(), head_out.end(), 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        const double w = scores[s] / denom;
        const auto vs = cache.v(layer, h, s);
        for (std::size_t c = 0; c < dh; ++c) head_out[c] += w * static_cast<double>(vs[c]);
      }

      double* dr = delta.data() + r * dm;
      for (std::size_t c = 0; c < dh; ++c) {
        const double hc = head_out[c];
        const double* wr = wo.data() + c * dm;
        for (std::size_t j = 0; j < dm; ++j) dr[j] += hc * wr[j];
      }
    }
  }

  for (std::size_t i = 0; i < delta.size(); ++i) x[i] += delta[i];
}

}  // namespace detail

PrefillResult prefill(const Model& model, std::span<const Token> tokens, std::uint64_t start_pos) {
  KvCache empty(model.geometry(), 0, start_pos);
  HiddenStates none{0, model.config().d_model(), {}};
  return extend(model, empty, none, tokens);
}

PrefillResult extend(const Model& model, const KvCache& cache, const HiddenStates& prior_states,
                     std::span<const Token> new_tokens) {
  const auto& cfg = model.config();
  if (!(cache.geometry() == model.geometry())) {
    throw Error(ErrorCode::kGeometryMismatch, "cache geometry does not match model");
  }
  const std::size_t dm = cfg.d_model();
  const std::size_t n0 = cache.n_tokens();
  const std::size_t prior_rows = prior_states.rows();
  if (prior_rows != 0 && (prior_states.d_model != dm || prior_states.offset + prior_rows != n0)) {
    throw Error(ErrorCode::kGeometryMismatch, "hidden states do not cover the cache rows");
  }
  model.check_tokens(new_tokens);

  const std::size_t m = new_tokens.size();
  PrefillResult out;
  out.cache = KvCache(cache.geometry(), n0 + m, cache.start_pos());
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      if (n0 == 0) continue;
      std::copy_n(cache.k(l, h, 0).data(), n0 * cfg.d_head, out.cache.k(l, h, 0).data());
      std::copy_n(cache.v(l, h, 0).data(), n0 * cfg.d_head, out.cache.v(l, h, 0).data());
    }
  }

  std::vector<double> x(m * dm);
  for (std::size_t i = 0; i < m; ++i) {
    const auto e = model.embedding(new_tokens[i]);
    std::copy(e.begin(), e.end(), x.begin() + static_cast<std::ptrdiff_t>(i * dm));
  }
  std::vector<std::size_t> rows(m);
  std::iota(rows.begin(), rows.end(), n0);
  if (m > 0) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      detail::layer_forward(model, out.cache, l, rows, x);
    }
  }

  out.states.d_model = dm;
  if (prior_rows == 0) {
    out.states.offset = n0;
    out.states.data = std::move(x);
  } else {
    out.states.offset = prior_states.offset;
    out.states.data = prior_states.data;
    out.states.data.insert(out.states.data.end(), x.begin(), x.end());
  }
  return out;
}

KvCache rebase(const KvCache& cache, std::uint64_t new_start) {
  KvCache out = cache;
  out.set_start_pos(new_start);
  return out;
}

}  // namespace kdn
