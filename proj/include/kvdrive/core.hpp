#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvdrive/error.hpp"

namespace kvdrive {

using TokenIndex = std::uint32_t;

// Sorted, duplicate-free list of token indices. Every set-valued result in
// the library uses this representation so set algebra stays linear.
using TokenSet = std::vector<TokenIndex>;

// One score per candidate (token, chunk or centroid).
using Scores = std::vector<float>;

struct LayerHeadId {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;

  auto operator<=>(const LayerHeadId&) const = default;

  std::string str() const;
};

// Flat position of (layer, head) in (layer, head) lexicographic order.
inline std::size_t stream_slot(LayerHeadId id, std::uint32_t heads) {
  return static_cast<std::size_t>(id.layer) * heads + id.head;
}

inline LayerHeadId stream_id(std::size_t slot, std::uint32_t heads) {
  return {static_cast<std::uint32_t>(slot / heads),
          static_cast<std::uint32_t>(slot % heads)};
}

struct KVEntry {
  TokenIndex token_index = 0;
  std::vector<float> key;
  std::vector<float> value;

  bool operator==(const KVEntry&) const = default;
};

// Row-major rows x dim float matrix. Keys, values and query streams all live
// in this layout.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

struct SparsityConfig {
  std::size_t budget_k = 1;
  std::size_t sink_count = 4;
  std::size_t local_count = 64;

  double budget_fraction(std::size_t context_length) const {
    return context_length == 0 ? 0.0
                               : static_cast<double>(budget_k) / static_cast<double>(context_length);
  }

  void validate(std::size_t context_length) const;

  // Sink tokens [0, sink) and local tokens [n - local, n), merged.
  TokenSet pinned_tokens(std::size_t context_length) const;
};

struct ScoredToken {
  TokenIndex token = 0;
  float score = 0.0f;

  bool operator==(const ScoredToken&) const = default;
};

// Ranking order used everywhere: higher score first, lower token index on ties.
inline bool ranks_before(const ScoredToken& a, const ScoredToken& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.token < b.token;
}

// Inner product accumulated in double, rounded once to float.
float dot(std::span<const float> a, std::span<const float> b);

Scores dot_scores(std::span<const float> query, const std::vector<std::vector<float>>& keys);
Scores dot_scores(std::span<const float> query, const Matrix& keys);

// Top `m` non-pinned candidates in ranking order (best first).
std::vector<ScoredToken> ranked_top(std::span<const float> scores, std::size_t m,
                                    const TokenSet& pinned);

TokenSet exact_topk(std::span<const float> query, const Matrix& keys, std::size_t k,
                    const TokenSet& pinned);
TokenSet exact_topk(std::span<const float> scores, std::size_t k, const TokenSet& pinned);

Scores softmax_weights(std::span<const float> scores);

// Sorted-set helpers.
TokenSet make_token_set(std::vector<TokenIndex> tokens);
TokenSet set_union(const TokenSet& a, const TokenSet& b);
TokenSet set_intersection(const TokenSet& a, const TokenSet& b);
TokenSet set_difference(const TokenSet& a, const TokenSet& b);
bool contains(const TokenSet& set, TokenIndex token);

void normalize(std::span<float> v);

}  // namespace kvdrive
