#include <algorithm>

#include "kvdrive/index.hpp"
#include "selection_util.hpp"

namespace kvdrive {

MinMaxIndex build_minmax_index(const Matrix& keys, std::size_t chunk_size) {
  require(chunk_size >= 1, ErrorCode::kInvalidArgument, "chunk size must be >= 1");
  require(!keys.empty(), ErrorCode::kInvalidArgument, "cannot chunk an empty key set");
  MinMaxIndex index;
  index.chunk_size = chunk_size;
  const std::size_t d = keys.dim();
  for (std::size_t begin = 0; begin < keys.rows(); begin += chunk_size) {
    const std::size_t end = std::min(keys.rows(), begin + chunk_size);
    MinMaxChunk c;
    c.begin = static_cast<TokenIndex>(begin);
    c.end = static_cast<TokenIndex>(end);
    const auto first = keys.row(begin);
    c.min.assign(first.begin(), first.end());
    c.max.assign(first.begin(), first.end());
    for (std::size_t t = begin + 1; t < end; ++t) {
      const auto row = keys.row(t);
      for (std::size_t i = 0; i < d; ++i) {
        c.min[i] = std::min(c.min[i], row[i]);
        c.max[i] = std::max(c.max[i], row[i]);
      }
    }
    index.chunks.push_back(std::move(c));
  }
  return index;
}

float minmax_bound(const MinMaxChunk& chunk, std::span<const float> query) {
  double acc = 0.0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const double q = query[i];
    acc += std::max(q * chunk.min[i], q * chunk.max[i]);
  }
  return static_cast<float>(acc);
}

Selection select_minmax(const MinMaxIndex& index, const Matrix& keys, std::span<const float> query,
                        const SparsityConfig& cfg) {
  const TokenSet pinned = detail::checked_pinned(cfg, keys.rows());
  std::vector<detail::RankedGroup> groups;
  groups.reserve(index.chunks.size());
  for (std::size_t i = 0; i < index.chunks.size(); ++i) {
    const auto& c = index.chunks[i];
    detail::RankedGroup g{minmax_bound(c, query), static_cast<std::uint32_t>(i), {}};
    for (TokenIndex t = c.begin; t < c.end; ++t) g.tokens.push_back(t);
    groups.push_back(std::move(g));
  }
  std::sort(groups.begin(), groups.end(), detail::group_before);
  return detail::take_groups(groups, keys, query, cfg, pinned, 0);
}

FlatIndex build_flat_index(const Matrix& keys, std::size_t n_clusters, std::uint64_t seed,
                           const KMeansOptions& options) {
  KMeansResult km = kmeans(keys, n_clusters, seed, options);
  FlatIndex index;
  index.centers = std::move(km.centers);
  index.members.resize(n_clusters);
  for (std::size_t t = 0; t < keys.rows(); ++t) {
    index.members[km.assignment[t]].push_back(static_cast<TokenIndex>(t));
  }
  return index;
}

Selection select_flat(const FlatIndex& index, const Matrix& keys, std::span<const float> query,
                      const SparsityConfig& cfg) {
  const TokenSet pinned = detail::checked_pinned(cfg, keys.rows());
  std::vector<detail::RankedGroup> groups;
  groups.reserve(index.members.size());
  for (std::size_t c = 0; c < index.members.size(); ++c) {
    groups.push_back({dot(query, index.centers.row(c)), static_cast<std::uint32_t>(c),
                      index.members[c]});
  }
  std::sort(groups.begin(), groups.end(), detail::group_before);
  return detail::take_groups(groups, keys, query, cfg, pinned, 0);
}

}  // namespace kvdrive
