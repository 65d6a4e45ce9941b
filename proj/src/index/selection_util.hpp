#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "kvdrive/index.hpp"

namespace kvdrive::detail {

struct RankedGroup {
  float score = 0.0f;
  std::uint32_t id = 0;
  std::vector<TokenIndex> tokens;  // ascending
};

inline bool group_before(const RankedGroup& a, const RankedGroup& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

// Takes whole groups in the given order until budget_k non-pinned tokens are
// gathered, trimming the last (lowest-ranked) group by per-token score. The
// pool is the critical set plus the best remaining tokens of all `groups`.
Selection take_groups(const std::vector<RankedGroup>& groups, const Matrix& keys,
                      std::span<const float> query, const SparsityConfig& cfg,
                      const TokenSet& pinned, std::size_t pool_size);

TokenSet checked_pinned(const SparsityConfig& cfg, std::size_t context_length);

}  // namespace kvdrive::detail
