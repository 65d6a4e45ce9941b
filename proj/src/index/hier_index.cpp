#include <algorithm>

#include "kvdrive/index.hpp"
#include "selection_util.hpp"

namespace kvdrive {

namespace detail {

TokenSet checked_pinned(const SparsityConfig& cfg, std::size_t context_length) {
  require(cfg.budget_k >= 1, ErrorCode::kInfeasible, "budget_k must be >= 1");
  TokenSet pinned = cfg.pinned_tokens(context_length);
  require(cfg.budget_k + pinned.size() <= context_length, ErrorCode::kInfeasible,
          "budget " + std::to_string(cfg.budget_k) + " exceeds the " +
              std::to_string(context_length - pinned.size()) + " unpinned tokens");
  return pinned;
}

Selection take_groups(const std::vector<RankedGroup>& groups, const Matrix& keys,
                      std::span<const float> query, const SparsityConfig& cfg,
                      const TokenSet& pinned, std::size_t pool_size) {
  const std::size_t k = cfg.budget_k;
  Selection sel;
  sel.pinned = pinned;

  std::vector<TokenIndex> critical;
  critical.reserve(k + 64);
  std::size_t used = 0;
  for (; used < groups.size() && critical.size() < k; ++used) {
    std::vector<ScoredToken> members;
    for (TokenIndex t : groups[used].tokens) {
      if (!contains(pinned, t)) members.push_back({t, 0.0f});
    }
    if (critical.size() + members.size() <= k) {
      for (const auto& m : members) critical.push_back(m.token);
      continue;
    }
    for (auto& m : members) m.score = dot(query, keys.row(m.token));
    const std::size_t keep = k - critical.size();
    std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep),
                      members.end(), ranks_before);
    for (std::size_t i = 0; i < keep; ++i) critical.push_back(members[i].token);
  }
  require(critical.size() == k, ErrorCode::kInfeasible,
          "candidate groups hold fewer than budget_k unpinned tokens");
  sel.critical = make_token_set(std::move(critical));

  const std::size_t pool_target = std::max(pool_size, k);
  std::vector<ScoredToken> rest;
  if (pool_target == k) {
    for (TokenIndex t : sel.critical) sel.pool.push_back({t, dot(query, keys.row(t))});
    std::sort(sel.pool.begin(), sel.pool.end(), ranks_before);
    return sel;
  }
  for (const auto& g : groups) {
    for (TokenIndex t : g.tokens) {
      if (contains(pinned, t)) continue;
      const ScoredToken st{t, dot(query, keys.row(t))};
      if (contains(sel.critical, t)) {
        sel.pool.push_back(st);
      } else {
        rest.push_back(st);
      }
    }
  }
  const std::size_t extra = std::min(rest.size(), pool_target - k);
  std::partial_sort(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra), rest.end(),
                    ranks_before);
  sel.pool.insert(sel.pool.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra));
  std::sort(sel.pool.begin(), sel.pool.end(), ranks_before);
  return sel;
}

}  // namespace detail

HierIndex::HierIndex(std::vector<Chunk> chunks, std::vector<Centroid> centroids,
                     std::size_t chunk_size, std::size_t token_count, std::size_t dim)
    : chunks_(std::move(chunks)),
      centroids_(std::move(centroids)),
      chunk_size_(chunk_size),
      token_count_(token_count),
      dim_(dim),
      owner_(chunks_.size(), 0) {
  for (const auto& c : centroids_) {
    for (auto m : c.members) {
      require(m < owner_.size(), ErrorCode::kFormat, "centroid member out of range");
      owner_[m] = c.centroid_id;
    }
  }
}

void HierIndex::validate() const {
  TokenIndex expected = 0;
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    const auto& c = chunks_[i];
    require(c.chunk_id == i && c.begin == expected && c.end > c.begin, ErrorCode::kFormat,
            "chunk table is not a contiguous partition");
    require(c.representative.size() == dim_, ErrorCode::kFormat, "chunk dimension mismatch");
    expected = c.end;
  }
  require(expected == token_count_, ErrorCode::kFormat, "chunks do not cover the context");
  std::vector<int> seen(chunks_.size(), 0);
  for (std::size_t i = 0; i < centroids_.size(); ++i) {
    const auto& c = centroids_[i];
    require(c.centroid_id == i && !c.members.empty(), ErrorCode::kFormat,
            "centroid ids must be dense and non-empty");
    require(c.vector.size() == dim_, ErrorCode::kFormat, "centroid dimension mismatch");
    for (auto m : c.members) ++seen.at(m);
  }
  require(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }), ErrorCode::kFormat,
          "every chunk must belong to exactly one centroid");
}

HierIndex build_index(const Matrix& keys, std::size_t chunk_size, std::size_t n_centroids,
                      std::uint64_t seed, const KMeansOptions& options) {
  auto chunks = build_chunks(keys, chunk_size);
  require(n_centroids >= 1 && n_centroids <= chunks.size(), ErrorCode::kInvalidArgument,
          "n_centroids " + std::to_string(n_centroids) + " must be in [1, " +
              std::to_string(chunks.size()) + "]");
  Matrix reps(chunks.size(), keys.dim());
  for (const auto& c : chunks) {
    std::copy(c.representative.begin(), c.representative.end(), reps.row(c.chunk_id).begin());
  }
  const KMeansResult km = kmeans(reps, n_centroids, seed, options);
  std::vector<Centroid> centroids(n_centroids);
  for (std::size_t c = 0; c < n_centroids; ++c) {
    centroids[c].centroid_id = static_cast<std::uint32_t>(c);
    const auto v = km.centers.row(c);
    centroids[c].vector.assign(v.begin(), v.end());
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    centroids[km.assignment[i]].members.push_back(static_cast<std::uint32_t>(i));
  }
  return HierIndex(std::move(chunks), std::move(centroids), chunk_size, keys.rows(), keys.dim());
}

Selection select_critical(const HierIndex& index, const Matrix& keys, std::span<const float> query,
                          const SparsityConfig& cfg, const SelectOptions& options) {
  require(keys.rows() == index.token_count(), ErrorCode::kInvalidArgument,
          "keys do not match the index");
  if (query.size() != index.dim()) throw DimensionError(0, index.dim(), query.size());
  const TokenSet pinned = detail::checked_pinned(cfg, index.token_count());

  std::vector<detail::RankedGroup> centroid_order;
  centroid_order.reserve(index.centroids().size());
  for (const auto& c : index.centroids()) {
    centroid_order.push_back({dot(query, c.vector), c.centroid_id, {}});
  }
  std::sort(centroid_order.begin(), centroid_order.end(), detail::group_before);

  const auto target = static_cast<std::size_t>(options.fanout * static_cast<double>(cfg.budget_k));
  std::vector<detail::RankedGroup> candidates;
  std::size_t gathered = 0;
  for (const auto& rc : centroid_order) {
    if (gathered >= std::max(target, cfg.budget_k)) break;
    for (auto chunk_id : index.centroids()[rc.id].members) {
      const Chunk& chunk = index.chunks()[chunk_id];
      detail::RankedGroup g{dot(query, chunk.representative), chunk_id, {}};
      for (TokenIndex t = chunk.begin; t < chunk.end; ++t) {
        g.tokens.push_back(t);
        if (!contains(pinned, t)) ++gathered;
      }
      candidates.push_back(std::move(g));
    }
  }
  std::sort(candidates.begin(), candidates.end(), detail::group_before);
  return detail::take_groups(candidates, keys, query, cfg, pinned, options.pool_size);
}

Selection select_exact(const Matrix& keys, std::span<const float> query, const SparsityConfig& cfg,
                       std::size_t pool_size) {
  const TokenSet pinned = detail::checked_pinned(cfg, keys.rows());
  const Scores scores = dot_scores(query, keys);
  const std::size_t unpinned = keys.rows() - pinned.size();
  const std::size_t m = std::min(std::max(pool_size, cfg.budget_k), unpinned);
  Selection sel;
  sel.pinned = pinned;
  sel.pool = ranked_top(scores, m, pinned);
  for (std::size_t i = 0; i < cfg.budget_k; ++i) sel.critical.push_back(sel.pool[i].token);
  std::sort(sel.critical.begin(), sel.critical.end());
  return sel;
}

}  // namespace kvdrive
