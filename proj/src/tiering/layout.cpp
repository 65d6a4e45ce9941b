#include <algorithm>

#include "kvdrive/tiering.hpp"

namespace kvdrive {

namespace {

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::uint64_t header_bytes(std::size_t streams) { return 24 + 20 * static_cast<std::uint64_t>(streams); }

// Cuts per-stream token orders into extents and assigns aligned segment offsets.
LayoutPlan pack(std::uint32_t layers, std::uint32_t heads, std::uint32_t dim,
                std::uint32_t context_length, std::uint32_t capacity,
                const std::vector<std::vector<TokenIndex>>& orders) {
  require(capacity >= 1, ErrorCode::kInvalidArgument, "extent capacity must be >= 1");
  LayoutPlan plan;
  plan.layers = layers;
  plan.heads = heads;
  plan.dim = dim;
  plan.context_length = context_length;
  plan.extent_capacity_tokens = capacity;
  std::uint64_t offset = align_up(header_bytes(orders.size()), kSegmentAlignment);
  for (std::size_t s = 0; s < orders.size(); ++s) {
    Segment seg;
    seg.owner = stream_id(s, heads);
    seg.file_offset = offset;
    const auto& order = orders[s];
    for (std::size_t begin = 0; begin < order.size(); begin += capacity) {
      const std::size_t end = std::min(order.size(), begin + capacity);
      Extent e;
      e.extent_id = static_cast<std::uint32_t>(seg.extents.size());
      e.owner = seg.owner;
      e.token_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
      e.byte_offset = seg.length;
      e.byte_length = extent_bytes(e.token_ids.size(), dim);
      seg.length += e.byte_length;
      seg.extents.push_back(std::move(e));
    }
    offset = align_up(offset + seg.length, kSegmentAlignment);
    plan.segments.push_back(std::move(seg));
  }
  plan.validate();
  return plan;
}

}  // namespace

std::uint64_t extent_bytes(std::size_t tokens, std::size_t dim) {
  return 4 + 4 * static_cast<std::uint64_t>(tokens) + tokens * 2ull * dim * sizeof(float);
}

std::uint64_t LayoutPlan::file_size() const {
  return segments.empty() ? align_up(header_bytes(0), kSegmentAlignment)
                          : segments.back().file_offset + segments.back().length;
}

void LayoutPlan::validate() const {
  require(segments.size() == static_cast<std::size_t>(layers) * heads, ErrorCode::kFormat,
          "layout needs one segment per (layer, head)");
  require(extent_capacity_tokens >= 1 && dim >= 1, ErrorCode::kFormat, "implausible layout header");
  std::uint64_t min_offset = header_bytes(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    require(seg.owner == stream_id(s, heads), ErrorCode::kFormat,
            "segments must be ordered by (layer, head)");
    require(seg.file_offset >= min_offset && seg.file_offset % kSegmentAlignment == 0,
            ErrorCode::kFormat, "segment regions overlap or are misaligned");
    std::vector<char> seen(context_length, 0);
    std::uint64_t cursor = 0;
    for (std::size_t i = 0; i < seg.extents.size(); ++i) {
      const Extent& e = seg.extents[i];
      require(e.extent_id == i && e.owner == seg.owner && !e.token_ids.empty() &&
                  e.token_ids.size() <= extent_capacity_tokens,
              ErrorCode::kFormat, "malformed extent in segment " + seg.owner.str());
      require(e.byte_offset == cursor && e.byte_length == extent_bytes(e.token_ids.size(), dim),
              ErrorCode::kFormat, "extents must be contiguous within a segment");
      cursor += e.byte_length;
      for (TokenIndex t : e.token_ids) {
        require(t < context_length && seen[t] == 0, ErrorCode::kFormat,
                "token " + std::to_string(t) + " duplicated or out of range in " + seg.owner.str());
        seen[t] = 1;
      }
    }
    require(cursor == seg.length, ErrorCode::kFormat, "segment length disagrees with its extents");
    require(std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; }),
            ErrorCode::kFormat, "segment " + seg.owner.str() + " does not cover every token");
    min_offset = seg.file_offset + seg.length;
  }
}

std::vector<std::vector<TokenLocation>> LayoutPlan::locations() const {
  std::vector<std::vector<TokenLocation>> out(segments.size(),
                                              std::vector<TokenLocation>(context_length));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (const Extent& e : segments[s].extents) {
      for (std::size_t i = 0; i < e.token_ids.size(); ++i) {
        out[s][e.token_ids[i]] = {e.extent_id, static_cast<std::uint32_t>(i)};
      }
    }
  }
  return out;
}

std::uint64_t CoAccessStats::co_access(std::size_t stream, std::uint32_t a, std::uint32_t b) const {
  const auto key = std::minmax(a, b);
  const auto& m = pairs.at(stream);
  const auto it = m.find({key.first, key.second});
  return it == m.end() ? 0 : it->second;
}

CoAccessStats collect_co_access(const std::vector<HierIndex>& indexes,
                                const std::vector<std::vector<TokenSet>>& requests) {
  require(requests.size() == indexes.size(), ErrorCode::kInvalidArgument,
          "co-access needs one request sequence per stream");
  CoAccessStats stats;
  stats.access.resize(indexes.size());
  stats.pairs.resize(indexes.size());
  for (std::size_t s = 0; s < indexes.size(); ++s) {
    const HierIndex& index = indexes[s];
    stats.access[s].assign(index.centroids().size(), 0);
    for (const TokenSet& wanted : requests[s]) {
      std::vector<std::uint32_t> touched;
      for (TokenIndex t : wanted) {
        require(t < index.token_count(), ErrorCode::kInvalidArgument, "request token out of range");
        touched.push_back(index.owner_of(index.chunk_of(t)));
      }
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (std::size_t i = 0; i < touched.size(); ++i) {
        ++stats.access[s][touched[i]];
        for (std::size_t j = i + 1; j < touched.size(); ++j) ++stats.pairs[s][{touched[i], touched[j]}];
      }
    }
  }
  return stats;
}

std::vector<std::uint32_t> centroid_order(const HierIndex& index, const CoAccessStats& stats,
                                          std::size_t stream) {
  const std::size_t n = index.centroids().size();
  const auto& access = stats.access.at(stream);
  require(access.size() == n, ErrorCode::kInvalidArgument, "co-access stats do not match the index");
  // Adjacency lists for the greedy chain.
  std::vector<std::vector<std::pair<std::uint32_t, std::uint64_t>>> neighbours(n);
  for (const auto& [key, count] : stats.pairs.at(stream)) {
    neighbours[key.first].push_back({key.second, count});
    neighbours[key.second].push_back({key.first, count});
  }
  std::vector<char> used(n, 0);
  std::vector<std::uint32_t> order;
  order.reserve(n);
  auto most_accessed = [&]() {
    std::uint32_t best = 0;
    bool found = false;
    for (std::uint32_t c = 0; c < n; ++c) {
      if (used[c]) continue;
      if (!found || access[c] > access[best]) {
        best = c;
        found = true;
      }
    }
    return best;
  };
  std::uint32_t current = most_accessed();
  while (order.size() < n) {
    used[current] = 1;
    order.push_back(current);
    if (order.size() == n) break;
    // Ties: more accesses, then lower centroid id.
    std::uint32_t next = 0;
    std::uint64_t best_count = 0;
    for (const auto& [other, count] : neighbours[current]) {
      if (used[other] || count == 0) continue;
      const bool better =
          best_count == 0 || count > best_count ||
          (count == best_count &&
           (access[other] > access[next] || (access[other] == access[next] && other < next)));
      if (better) {
        next = other;
        best_count = count;
      }
    }
    current = best_count > 0 ? next : most_accessed();
  }
  return order;
}

LayoutPlan plan_layout(const std::vector<HierIndex>& indexes, const CoAccessStats& co_access,
                       std::uint32_t layers, std::uint32_t heads, std::uint32_t extent_capacity_tokens) {
  require(indexes.size() == static_cast<std::size_t>(layers) * heads && !indexes.empty(),
          ErrorCode::kInvalidArgument, "plan_layout needs one index per (layer, head)");
  const HierIndex& first = indexes.front();
  for (const auto& index : indexes) {
    require(index.token_count() == first.token_count() && index.dim() == first.dim(),
            ErrorCode::kInvalidArgument, "indexes disagree on context length or dim");
    require(extent_capacity_tokens >= index.chunk_size(), ErrorCode::kInvalidArgument,
            "extent capacity must be >= chunk size");
  }
  std::vector<std::vector<TokenIndex>> orders(indexes.size());
  for (std::size_t s = 0; s < indexes.size(); ++s) {
    const HierIndex& index = indexes[s];
    auto& order = orders[s];
    order.reserve(index.token_count());
    for (std::uint32_t c : centroid_order(index, co_access, s)) {
      std::vector<std::uint32_t> members = index.centroids()[c].members;
      std::sort(members.begin(), members.end());
      for (std::uint32_t chunk_id : members) {
        const Chunk& chunk = index.chunks()[chunk_id];
        for (TokenIndex t = chunk.begin; t < chunk.end; ++t) order.push_back(t);
      }
    }
  }
  return pack(layers, heads, static_cast<std::uint32_t>(first.dim()),
              static_cast<std::uint32_t>(first.token_count()), extent_capacity_tokens, orders);
}

LayoutPlan sequential_layout(std::uint32_t layers, std::uint32_t heads, std::uint32_t dim,
                             std::uint32_t context_length, std::uint32_t extent_capacity_tokens) {
  std::vector<TokenIndex> order(context_length);
  for (std::uint32_t t = 0; t < context_length; ++t) order[t] = t;
  std::vector<std::vector<TokenIndex>> orders(static_cast<std::size_t>(layers) * heads, order);
  return pack(layers, heads, dim, context_length, extent_capacity_tokens, orders);
}

std::size_t extents_touched(const LayoutPlan& plan, std::size_t stream, const TokenSet& wanted) {
  std::vector<char> hit(plan.segments.at(stream).extents.size(), 0);
  for (const Extent& e : plan.segments[stream].extents) {
    for (TokenIndex t : e.token_ids) {
      if (contains(wanted, t)) {
        hit[e.extent_id] = 1;
        break;
      }
    }
  }
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
}

}  // namespace kvdrive
