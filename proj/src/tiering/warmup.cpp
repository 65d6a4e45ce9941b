#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kvdrive/tiering.hpp"

namespace kvdrive {

std::vector<double> attention_mass(const Matrix& keys, const Matrix& obs_queries, double logit_scale) {
  require(!keys.empty(), ErrorCode::kInvalidArgument, "importance needs a non-empty prefix");
  require(obs_queries.rows() >= 1, ErrorCode::kInvalidArgument, "observation window must be >= 1");
  if (obs_queries.dim() != keys.dim()) throw DimensionError(0, keys.dim(), obs_queries.dim());
  std::vector<double> mass(keys.rows(), 0.0);
  std::vector<double> logits(keys.rows());
  for (std::size_t q = 0; q < obs_queries.rows(); ++q) {
    const auto query = obs_queries.row(q);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < keys.rows(); ++t) {
      logits[t] = logit_scale * static_cast<double>(dot(query, keys.row(t)));
      top = std::max(top, logits[t]);
    }
    double total = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - top);
      total += l;
    }
    for (std::size_t t = 0; t < keys.rows(); ++t) mass[t] += logits[t] / total;
  }
  return mass;
}

ImportanceProfile compute_importance(const DecodingTrace& trace) {
  ImportanceProfile profile;
  const std::size_t w = trace.spec().obs_window;
  require(w >= 1, ErrorCode::kInvalidArgument, "observation window must be >= 1");
  profile.observation_window_len = w;
  const double scale = std::sqrt(static_cast<double>(trace.dim()));
  profile.global.assign(trace.context_length(), 0.0);
  for (std::size_t s = 0; s < trace.stream_count(); ++s) {
    Matrix obs(w, trace.dim());
    for (std::size_t i = 0; i < w; ++i) {
      const auto q = trace.obs_query(i, s);
      std::copy(q.begin(), q.end(), obs.row(i).begin());
    }
    profile.per_stream.push_back(attention_mass(trace.keys(s), obs, scale));
    const auto& m = profile.per_stream.back();
    for (std::size_t t = 0; t < m.size(); ++t) profile.global[t] += m[t];
  }
  for (auto& g : profile.global) g /= static_cast<double>(trace.stream_count());
  return profile;
}

std::size_t Placement::count(Tier t) const {
  return static_cast<std::size_t>(std::count(tier.begin(), tier.end(), t));
}

TokenSet Placement::tokens_in(Tier t) const {
  TokenSet out;
  for (std::size_t i = 0; i < tier.size(); ++i) {
    if (tier[i] == t) out.push_back(static_cast<TokenIndex>(i));
  }
  return out;
}

Placement warmup_placement(const std::vector<double>& scores, const TierConfig& tiers,
                           std::uint64_t bytes_per_token, const TokenSet& pinned) {
  require(bytes_per_token > 0, ErrorCode::kInvalidArgument, "bytes per token must be positive");
  const std::size_t n = scores.size();
  require(tiers.disk.capacity_bytes >= n * bytes_per_token, ErrorCode::kInfeasible,
          "disk tier cannot hold the full KV cache");
  for (double s : scores) {
    require(std::isfinite(s) && s >= 0.0, ErrorCode::kInvalidArgument,
            "importance scores must be finite and >= 0");
  }
  std::size_t pinned_count = 0;
  for (TokenIndex t : pinned) pinned_count += t < n ? 1 : 0;
  require(tiers.fast.capacity_bytes >= pinned_count * bytes_per_token, ErrorCode::kInfeasible,
          "fast tier cannot hold the sink/local tokens");

  Placement p;
  p.bytes_per_token = bytes_per_token;
  p.tier.assign(n, Tier::kDisk);
  for (TokenIndex t : pinned) {
    if (t < n) p.tier[t] = Tier::kFast;
  }

  std::vector<TokenIndex> order;
  order.reserve(n - pinned_count);
  for (std::size_t t = 0; t < n; ++t) {
    if (p.tier[t] != Tier::kFast) order.push_back(static_cast<TokenIndex>(t));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenIndex a, TokenIndex b) { return scores[a] > scores[b]; });

  std::size_t fast_slots = tiers.fast.capacity_bytes / bytes_per_token - pinned_count;
  std::size_t ram_slots = tiers.ram.capacity_bytes / bytes_per_token;
  for (TokenIndex t : order) {
    if (fast_slots > 0) {
      p.tier[t] = Tier::kFast;
      --fast_slots;
    } else if (ram_slots > 0) {
      p.tier[t] = Tier::kRam;
      --ram_slots;
    } else {
      break;
    }
  }
  return p;
}

}  // namespace kvdrive
