#include <algorithm>
#include <cmath>
#include <limits>

#include "kvdrive/cache.hpp"

namespace kvdrive {

const char* to_string(EvictionKind kind) {
  switch (kind) {
    case EvictionKind::kLookahead: return "LA";
    case EvictionKind::kLru: return "LRU";
    case EvictionKind::kBelady: return "Belady";
  }
  return "?";
}

EvictionKind parse_eviction(const std::string& name) {
  if (name == "LA" || name == "lookahead") return EvictionKind::kLookahead;
  if (name == "LRU" || name == "lru") return EvictionKind::kLru;
  if (name == "Belady" || name == "belady") return EvictionKind::kBelady;
  fail(ErrorCode::kInvalidArgument, "unknown eviction policy '" + name + "'");
}

FutureAccess::FutureAccess(const std::vector<TokenSet>& requests) {
  for (std::size_t step = 0; step < requests.size(); ++step) {
    for (TokenIndex t : requests[step]) uses_[t].push_back(static_cast<std::uint32_t>(step));
  }
}

std::uint32_t FutureAccess::next_use(TokenIndex token, std::uint32_t step) const {
  const auto it = uses_.find(token);
  if (it == uses_.end()) return std::numeric_limits<std::uint32_t>::max();
  const auto next = std::upper_bound(it->second.begin(), it->second.end(), step);
  return next == it->second.end() ? std::numeric_limits<std::uint32_t>::max() : *next;
}

WindowCache::WindowCache(LayerHeadId owner, std::size_t capacity_tokens, TokenSet pinned,
                         std::size_t dim)
    : owner_(owner),
      capacity_(capacity_tokens),
      pinned_(std::move(pinned)),
      entry_bytes_(entry_bytes(dim)) {
  resident_.reserve(capacity_tokens + capacity_tokens / 2 + 1);
}

TokenSet WindowCache::resident_tokens() const {
  TokenSet out;
  out.reserve(resident_.size());
  for (const auto& [token, slot] : resident_) out.push_back(token);
  std::sort(out.begin(), out.end());
  return out;
}

LookupResult WindowCache::lookup(const TokenSet& wanted) {
  LookupResult r;
  for (TokenIndex t : wanted) {
    if (resident_.contains(t) || contains(pinned_, t)) {
      r.hits.push_back(t);
    } else {
      r.misses.push_back(t);
    }
  }
  stats_.hits += r.hits.size();
  stats_.misses += r.misses.size();
  stats_.bytes_fetched += r.misses.size() * entry_bytes_;
  return r;
}

double WindowCache::effective_score(const Slot& slot) const {
  return static_cast<double>(slot.score) *
         std::pow(decay_, static_cast<double>(step_ - slot.scored_step));
}

TokenSet WindowCache::admit_evict(const TokenSet& selection,
                                  const std::vector<ScoredToken>& step_scores,
                                  const EvictionPolicy& policy) {
  const TokenSet admitted = set_difference(selection, pinned_);
  require(admitted.size() <= capacity_, ErrorCode::kInvalidArgument,
          "selection of " + std::to_string(admitted.size()) + " tokens exceeds window capacity " +
              std::to_string(capacity_) + " for " + owner_.str());
  require(policy.kind != EvictionKind::kBelady || policy.future != nullptr,
          ErrorCode::kInvalidArgument, "Belady eviction needs the future access sequence");
  decay_ = policy.decay;
  const std::uint32_t now = step_;

  for (TokenIndex t : admitted) {
    auto [it, inserted] = resident_.try_emplace(t);
    it->second.last_access = now;
    if (inserted) {
      it->second.score = 0.0f;
      it->second.scored_step = now;
    }
  }
  for (const auto& st : step_scores) {
    const auto it = resident_.find(st.token);
    if (it == resident_.end()) continue;
    it->second.score = st.score;
    it->second.scored_step = now;
  }

  TokenSet evicted;
  if (resident_.size() > capacity_) {
    struct Candidate {
      double key;  // smaller = evicted first
      TokenIndex token;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(resident_.size());
    for (const auto& [token, slot] : resident_) {
      if (contains(admitted, token)) continue;
      double key = 0.0;
      switch (policy.kind) {
        case EvictionKind::kLookahead: key = effective_score(slot); break;
        case EvictionKind::kLru: key = static_cast<double>(slot.last_access); break;
        case EvictionKind::kBelady:
          key = -static_cast<double>(policy.future->next_use(token, now));
          break;
      }
      candidates.push_back({key, token});
    }
    const std::size_t excess = resident_.size() - capacity_;
    // Ties evict the higher token index first so lower indices stay resident.
    auto order = [](const Candidate& a, const Candidate& b) {
      if (a.key != b.key) return a.key < b.key;
      return a.token > b.token;
    };
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(excess),
                     candidates.end(), order);
    for (std::size_t i = 0; i < excess; ++i) {
      evicted.push_back(candidates[i].token);
      resident_.erase(candidates[i].token);
    }
    std::sort(evicted.begin(), evicted.end());
  }
  ++step_;
  return evicted;
}

}  // namespace kvdrive
