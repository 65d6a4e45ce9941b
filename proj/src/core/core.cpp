#include "kvdrive/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kvdrive {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kTimeout: return "timeout";
  }
  return "unknown";
}

namespace {
std::string dimension_message(std::size_t index, std::size_t expected, std::size_t actual) {
  std::ostringstream os;
  os << "dimension mismatch at index " << index << ": expected " << expected << ", got "
     << actual;
  return os.str();
}
}  // namespace

DimensionError::DimensionError(std::size_t index, std::size_t expected, std::size_t actual)
    : Error(ErrorCode::kDimensionMismatch, dimension_message(index, expected, actual)),
      index_(index),
      expected_(expected),
      actual_(actual) {}

std::string LayerHeadId::str() const {
  return "L" + std::to_string(layer) + "H" + std::to_string(head);
}

void SparsityConfig::validate(std::size_t context_length) const {
  require(budget_k >= 1, ErrorCode::kInvalidArgument, "budget_k must be >= 1");
  require(sink_count + local_count + budget_k <= context_length, ErrorCode::kInvalidArgument,
          "sink + local + budget_k exceeds context length " + std::to_string(context_length));
}

TokenSet SparsityConfig::pinned_tokens(std::size_t context_length) const {
  TokenSet out;
  const std::size_t sink = std::min(sink_count, context_length);
  for (std::size_t i = 0; i < sink; ++i) out.push_back(static_cast<TokenIndex>(i));
  const std::size_t local_begin =
      context_length > local_count ? context_length - local_count : 0;
  for (std::size_t i = std::max(local_begin, sink); i < context_length; ++i) {
    out.push_back(static_cast<TokenIndex>(i));
  }
  return out;
}

float dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return static_cast<float>(acc);
}

Scores dot_scores(std::span<const float> query, const std::vector<std::vector<float>>& keys) {
  Scores out;
  out.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].size() != query.size()) throw DimensionError(i, query.size(), keys[i].size());
    out.push_back(dot(query, keys[i]));
  }
  return out;
}

Scores dot_scores(std::span<const float> query, const Matrix& keys) {
  if (keys.dim() != query.size() && !keys.empty()) {
    throw DimensionError(0, query.size(), keys.dim());
  }
  Scores out(keys.rows());
  for (std::size_t i = 0; i < keys.rows(); ++i) out[i] = dot(query, keys.row(i));
  return out;
}

std::vector<ScoredToken> ranked_top(std::span<const float> scores, std::size_t m,
                                    const TokenSet& pinned) {
  std::vector<ScoredToken> candidates;
  candidates.reserve(scores.size());
  auto pin = pinned.begin();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto token = static_cast<TokenIndex>(i);
    while (pin != pinned.end() && *pin < token) ++pin;
    if (pin != pinned.end() && *pin == token) continue;
    candidates.push_back({token, scores[i]});
  }
  require(m <= candidates.size(), ErrorCode::kInvalidArgument,
          "requested " + std::to_string(m) + " candidates but only " +
              std::to_string(candidates.size()) + " are not pinned");
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(m),
                    candidates.end(), ranks_before);
  candidates.resize(m);
  return candidates;
}

TokenSet exact_topk(std::span<const float> scores, std::size_t k, const TokenSet& pinned) {
  TokenSet out;
  for (const auto& st : ranked_top(scores, k, pinned)) out.push_back(st.token);
  std::sort(out.begin(), out.end());
  return out;
}

TokenSet exact_topk(std::span<const float> query, const Matrix& keys, std::size_t k,
                    const TokenSet& pinned) {
  const Scores scores = dot_scores(query, keys);
  return exact_topk(scores, k, pinned);
}

Scores softmax_weights(std::span<const float> scores) {
  require(!scores.empty(), ErrorCode::kInvalidArgument, "softmax of empty score vector");
  double max_score = scores[0];
  for (float s : scores) {
    require(std::isfinite(s), ErrorCode::kInvalidArgument, "softmax input is not finite");
    max_score = std::max(max_score, static_cast<double>(s));
  }
  std::vector<double> e(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp(static_cast<double>(scores[i]) - max_score);
    total += e[i];
  }
  Scores out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = static_cast<float>(e[i] / total);
  return out;
}

TokenSet make_token_set(std::vector<TokenIndex> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

TokenSet set_union(const TokenSet& a, const TokenSet& b) {
  TokenSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

TokenSet set_intersection(const TokenSet& a, const TokenSet& b) {
  TokenSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

TokenSet set_difference(const TokenSet& a, const TokenSet& b) {
  TokenSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool contains(const TokenSet& set, TokenIndex token) {
  return std::binary_search(set.begin(), set.end(), token);
}

void normalize(std::span<float> v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) return;
  for (float& x : v) x = static_cast<float>(x / norm);
}

}  // namespace kvdrive
