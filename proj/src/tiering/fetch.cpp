#include <algorithm>
#include <chrono>
#include <exception>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "extent_codec.hpp"
#include "kvdrive/bounded_queue.hpp"
#include "kvdrive/tiering.hpp"

namespace kvdrive {

const char* to_string(FetchStrategy s) {
  switch (s) {
    case FetchStrategy::kLayerWise: return "LayerWise";
    case FetchStrategy::kSparseBlocks: return "SparseBlocks";
    case FetchStrategy::kHierarchical: return "Hierarchical";
    case FetchStrategy::kBalanced: return "Balanced";
  }
  return "?";
}

FetchStrategy parse_strategy(const std::string& name) {
  for (auto s : {FetchStrategy::kLayerWise, FetchStrategy::kSparseBlocks,
                 FetchStrategy::kHierarchical, FetchStrategy::kBalanced}) {
    if (name == to_string(s)) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown fetch strategy '" + name + "'");
}

void FetchStats::add(const FetchStats& other) {
  bytes_moved += other.bytes_moved;
  io_ops += other.io_ops;
  predicted_time_s += other.predicted_time_s;
  wall_time_s += other.wall_time_s;
  pool_hits += other.pool_hits;
  pool_misses += other.pool_misses;
  upper_tier_hits += other.upper_tier_hits;
}

CsvSchema fetch_stats_schema() {
  return {{"strategy", ColumnType::kText},       {"step", ColumnType::kInteger},
          {"bytes_moved", ColumnType::kInteger}, {"io_ops", ColumnType::kInteger},
          {"predicted_time_s", ColumnType::kReal}, {"wall_time_s", ColumnType::kReal}};
}

void append_csv(CsvTable& table, const FetchStats& stats) {
  table.row() << to_string(stats.strategy) << stats.step << stats.bytes_moved << stats.io_ops
              << stats.predicted_time_s << stats.wall_time_s;
}

namespace {

using Clock = std::chrono::steady_clock;
using Groups = std::vector<std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>>>;

bool is_resident(const std::vector<std::uint32_t>& resident, std::size_t stream) {
  return std::find(resident.begin(), resident.end(), stream) != resident.end();
}

FetchPlan plan_groups(const TieredStore& store, const Groups& groups, FetchStrategy strategy,
                      const std::vector<std::uint32_t>& resident) {
  FetchPlan plan;
  plan.strategy = strategy;
  const auto& segments = store.plan().segments;
  for (std::size_t s = 0; s < groups.size(); ++s) {
    const auto& g = groups[s];
    if (g.empty()) continue;
    if (strategy == FetchStrategy::kBalanced && is_resident(resident, s)) {
      plan.pool_hit_extents += g.size();
      continue;
    }
    const Segment& seg = segments[s];
    const auto stream = static_cast<std::uint32_t>(s);
    if (strategy == FetchStrategy::kLayerWise) {
      plan.requests.push_back({stream, 0, static_cast<std::uint32_t>(seg.extents.size() - 1),
                               seg.file_offset, seg.length});
      continue;
    }
    // Extents of a segment are contiguous, so consecutive ids coalesce.
    for (std::size_t i = 0; i < g.size();) {
      std::size_t j = i;
      while (j + 1 < g.size() && g[j + 1].first == g[j].first + 1) ++j;
      const Extent& first = seg.extents[g[i].first];
      const Extent& last = seg.extents[g[j].first];
      plan.requests.push_back({stream, first.extent_id, last.extent_id,
                               seg.file_offset + first.byte_offset,
                               last.byte_offset + last.byte_length - first.byte_offset});
      i = j + 1;
    }
  }
  std::sort(plan.requests.begin(), plan.requests.end(),
            [](const ReadRange& a, const ReadRange& b) { return a.offset < b.offset; });
  for (const auto& r : plan.requests) plan.predicted_bytes += r.length;
  plan.predicted_io_ops = plan.requests.size();
  return plan;
}

std::uint64_t wanted_extents(const Groups& groups, const std::vector<std::uint32_t>& resident,
                             FetchStrategy strategy) {
  std::uint64_t n = 0;
  for (std::size_t s = 0; s < groups.size(); ++s) {
    if (strategy == FetchStrategy::kBalanced && is_resident(resident, s)) continue;
    n += groups[s].size();
  }
  return n;
}

// Decodes the wanted slots of the extents covered by `r`, whose bytes start
// at `bytes`.
void decode_range(const TieredStore& store, const ReadRange& r, std::span<const std::byte> bytes,
                  const Groups& groups, std::vector<std::vector<KVEntry>>& out) {
  const Segment& seg = store.plan().segments[r.stream];
  const auto& g = groups[r.stream];
  const std::uint64_t base = seg.extents[r.first_extent].byte_offset;
  auto it = std::lower_bound(g.begin(), g.end(), r.first_extent,
                             [](const auto& item, std::uint32_t id) { return item.first < id; });
  for (; it != g.end() && it->first <= r.last_extent; ++it) {
    const Extent& e = seg.extents[it->first];
    detail::decode_extent(bytes.subspan(e.byte_offset - base, e.byte_length), e, store.dim(),
                          it->second, out[r.stream]);
  }
}

// Splits ranges at extent boundaries so no piece exceeds `limit` bytes.
std::vector<ReadRange> split_ranges(const TieredStore& store, const std::vector<ReadRange>& ranges,
                                    std::uint64_t limit) {
  std::vector<ReadRange> out;
  for (const ReadRange& r : ranges) {
    if (r.length <= limit) {
      out.push_back(r);
      continue;
    }
    const Segment& seg = store.plan().segments[r.stream];
    ReadRange piece{r.stream, r.first_extent, r.first_extent,
                    seg.file_offset + seg.extents[r.first_extent].byte_offset, 0};
    for (std::uint32_t e = r.first_extent; e <= r.last_extent; ++e) {
      const std::uint64_t len = seg.extents[e].byte_length;
      if (piece.length > 0 && piece.length + len > limit) {
        out.push_back(piece);
        piece = {r.stream, e, e, seg.file_offset + seg.extents[e].byte_offset, 0};
      }
      piece.last_extent = e;
      piece.length += len;
    }
    out.push_back(piece);
  }
  return out;
}

}  // namespace

FetchPlan plan_fetch(const TieredStore& store, const std::vector<TokenSet>& wanted,
                     FetchStrategy strategy, const std::vector<std::uint32_t>& resident) {
  return plan_groups(store, detail::group_by_extent(store, wanted), strategy, resident);
}

struct Fetcher::Impl {
  struct Job {
    std::size_t batch = 0;
    std::vector<ReadRange> pieces;
  };
  struct Filled {
    Job job;
    std::size_t buffer = 0;
    std::exception_ptr error;
  };
  struct Batch {
    Groups groups;
    FetchPlan plan;
    std::vector<Job> jobs;
    FetchStats stats;
    std::vector<std::vector<KVEntry>> entries;
  };

  Impl(std::shared_ptr<const TieredStore> s, FetchStrategy st, TierConfig t, FetchOptions o)
      : store(std::move(s)),
        strategy(st),
        tiers(std::move(t)),
        options(std::move(o)),
        free_buffers(2),
        jobs(1u << 16),
        ready(2) {}

  ~Impl() {
    jobs.close();
    free_buffers.close();
    ready.close();
    if (reader.joinable()) reader.join();
  }

  bool staged() const {
    return strategy == FetchStrategy::kHierarchical || strategy == FetchStrategy::kBalanced;
  }

  // Reads advance a modelled device clock; sleeping happens in settle(), so
  // many small reads do not each pay the scheduler's wake-up overshoot.
  void paced_read(std::uint64_t offset, std::uint64_t length, std::byte* out) const {
    const auto start = Clock::now();
    store->read_at(offset, length, out);
    if (options.pace_io) {
      device_free = std::max(device_free, start) +
                    std::chrono::duration_cast<Clock::duration>(
                        std::chrono::duration<double>(tiers.disk.transfer_time(length, 1)));
    }
  }

  void settle() const {
    if (options.pace_io) std::this_thread::sleep_until(device_free);
  }

  void reader_loop() {
    while (auto job = jobs.pop()) {
      auto buffer = free_buffers.pop();
      if (!buffer) break;
      Filled f{std::move(*job), *buffer, nullptr};
      try {
        std::uint64_t pos = 0;
        for (const ReadRange& r : f.job.pieces) {
          paced_read(r.offset, r.length, buffers[f.buffer].data() + pos);
          pos += r.length;
        }
        settle();
      } catch (...) {
        f.error = std::current_exception();
      }
      if (!ready.push(std::move(f))) break;
    }
  }

  // Removes tokens held by the Fast/Ram placement and serves them from memory.
  std::vector<TokenSet> split_upper(const std::vector<TokenSet>& wanted, Batch& b) const {
    if (options.placement == nullptr) return wanted;
    std::vector<TokenSet> disk(wanted.size());
    std::uint64_t ram_bytes = 0;
    for (std::size_t s = 0; s < wanted.size(); ++s) {
      for (TokenIndex t : wanted[s]) {
        const auto it = upper[s].find(t);
        if (it == upper[s].end()) {
          disk[s].push_back(t);
          continue;
        }
        b.entries[s].push_back(it->second);
        ++b.stats.upper_tier_hits;
        if (options.placement->tier[t] == Tier::kRam) ram_bytes += 2ull * store->dim() * sizeof(float);
      }
    }
    if (ram_bytes > 0) b.stats.predicted_time_s += tiers.ram.transfer_time(ram_bytes, 1);
    return disk;
  }

  Batch prepare(const std::vector<TokenSet>& wanted, std::uint32_t step) const {
    Batch b;
    b.entries.resize(store->stream_count());
    b.stats.strategy = strategy;
    b.stats.step = step;
    const auto disk = split_upper(wanted, b);
    b.groups = detail::group_by_extent(*store, disk);
    b.plan = plan_groups(*store, b.groups, strategy, options.resident_streams);
    b.stats.bytes_moved = b.plan.predicted_bytes;
    b.stats.pool_hits = b.plan.pool_hit_extents;
    b.stats.pool_misses = wanted_extents(b.groups, options.resident_streams, strategy);
    if (!staged()) {
      b.stats.io_ops = b.plan.requests.size();
    } else {
      const auto pieces = split_ranges(*store, b.plan.requests, buffer_capacity);
      b.stats.io_ops = pieces.size();
      Job job;
      std::uint64_t used = 0;
      for (const ReadRange& r : pieces) {
        if (!job.pieces.empty() && used + r.length > buffer_capacity) {
          b.jobs.push_back(std::move(job));
          job = Job{};
          used = 0;
        }
        job.pieces.push_back(r);
        used += r.length;
      }
      if (!job.pieces.empty()) b.jobs.push_back(std::move(job));
    }
    b.stats.predicted_time_s += tiers.disk.transfer_time(b.stats.bytes_moved, b.stats.io_ops);
    return b;
  }

  void decode_resident(Batch& b) const {
    if (strategy != FetchStrategy::kBalanced) return;
    for (std::uint32_t s : options.resident_streams) {
      if (b.groups[s].empty()) continue;
      const Segment& seg = store->plan().segments[s];
      const ReadRange whole{s, 0, static_cast<std::uint32_t>(seg.extents.size() - 1),
                            seg.file_offset, seg.length};
      decode_range(*store, whole, resident_bytes[s], b.groups, b.entries);
    }
  }

  void read_sync(Batch& b) const {
    for (const ReadRange& r : b.plan.requests) {
      std::vector<std::byte> bytes(r.length);  // fresh allocation per read
      paced_read(r.offset, r.length, bytes.data());
      decode_range(*store, r, bytes, b.groups, b.entries);
    }
    settle();
  }

  void collect_staged(Batch& b) {
    for (std::size_t i = 0; i < b.jobs.size(); ++i) {
      auto filled = ready.pop();
      require(filled.has_value(), ErrorCode::kIo, "reader stopped before the batch completed");
      if (filled->error) {
        free_buffers.push(filled->buffer);
        std::rethrow_exception(filled->error);
      }
      std::uint64_t pos = 0;
      for (const ReadRange& r : filled->job.pieces) {
        decode_range(*store, r, std::span(buffers[filled->buffer]).subspan(pos, r.length), b.groups,
                     b.entries);
        pos += r.length;
      }
      free_buffers.push(filled->buffer);
    }
  }

  void submit(Batch& b, std::size_t index) {
    for (Job& job : b.jobs) {
      job.batch = index;
      jobs.push(job);
    }
  }

  std::shared_ptr<const TieredStore> store;
  FetchStrategy strategy;
  TierConfig tiers;
  FetchOptions options;
  mutable Clock::time_point device_free{};
  std::vector<std::vector<std::byte>> resident_bytes;
  std::vector<std::unordered_map<TokenIndex, KVEntry>> upper;
  std::vector<std::vector<std::byte>> buffers;
  std::uint64_t buffer_capacity = 0;
  BoundedQueue<std::size_t> free_buffers;
  BoundedQueue<Job> jobs;
  BoundedQueue<Filled> ready;
  std::thread reader;
};

Fetcher::Fetcher(std::shared_ptr<const TieredStore> store, FetchStrategy strategy, TierConfig tiers,
                 FetchOptions options)
    : strategy_(strategy) {
  require(store != nullptr, ErrorCode::kInvalidArgument, "fetcher needs a store");
  tiers.validate();
  impl_ = std::make_unique<Impl>(std::move(store), strategy, std::move(tiers), std::move(options));
  Impl& im = *impl_;
  const TieredStore& st = *im.store;
  const std::size_t streams = st.stream_count();
  warm_stats_.strategy = strategy;

  if (im.options.placement != nullptr) {
    require(im.options.placement->tier.size() == st.plan().context_length,
            ErrorCode::kInvalidArgument, "placement does not match the store");
    TokenSet upper_tokens = set_union(im.options.placement->tokens_in(Tier::kFast),
                                      im.options.placement->tokens_in(Tier::kRam));
    const auto entries = st.read_entries(std::vector<TokenSet>(streams, upper_tokens));
    im.upper.resize(streams);
    for (std::size_t s = 0; s < streams; ++s) {
      for (const auto& e : entries[s]) im.upper[s].emplace(e.token_index, e);
    }
  } else {
    im.upper.resize(streams);
  }

  std::uint64_t resident_total = 0;
  if (strategy == FetchStrategy::kBalanced) {
    im.resident_bytes.resize(streams);
    auto& list = im.options.resident_streams;
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    for (std::uint32_t s : list) {
      require(s < streams, ErrorCode::kInvalidArgument, "resident stream out of range");
      const Segment& seg = st.plan().segments[s];
      im.resident_bytes[s].resize(seg.length);
      im.paced_read(seg.file_offset, seg.length, im.resident_bytes[s].data());
      resident_total += seg.length;
      warm_stats_.bytes_moved += seg.length;
      ++warm_stats_.io_ops;
    }
    im.settle();
    warm_stats_.predicted_time_s = im.tiers.disk.transfer_time(warm_stats_.bytes_moved, warm_stats_.io_ops);
  } else {
    im.options.resident_streams.clear();
  }

  if (im.staged()) {
    const std::uint64_t max_extent = extent_bytes(st.plan().extent_capacity_tokens, st.dim());
    require(im.options.pool_bytes >= resident_total &&
                (im.options.pool_bytes - resident_total) / 2 >= max_extent,
            ErrorCode::kInvalidArgument,
            "buffer pool smaller than one extent per staging buffer after resident segments");
    im.buffer_capacity = (im.options.pool_bytes - resident_total) / 2;
    // Preallocated once and reused for every read.
    im.buffers.assign(2, std::vector<std::byte>(im.buffer_capacity));
    for (std::size_t i = 0; i < im.buffers.size(); ++i) im.free_buffers.push(i);
    im.reader = std::thread([&im] { im.reader_loop(); });
  }
}

Fetcher::~Fetcher() = default;

FetchStats Fetcher::fetch_step(const std::vector<std::vector<TokenSet>>& batches, std::uint32_t step,
                               const BatchConsumer& consume) {
  Impl& im = *impl_;
  const auto start = Clock::now();
  FetchStats total;
  total.strategy = strategy_;
  total.step = step;
  if (batches.empty()) return total;

  auto finish = [&](std::size_t i, Impl::Batch& b) {
    im.decode_resident(b);
    for (auto& e : b.entries) detail::sort_entries(e);
    total.add(b.stats);
    if (consume) consume(i, FetchResult{std::move(b.entries), b.stats});
  };

  if (!im.staged()) {
    for (std::size_t i = 0; i < batches.size(); ++i) {
      Impl::Batch b = im.prepare(batches[i], step);
      im.read_sync(b);
      finish(i, b);
    }
  } else {
    Impl::Batch current = im.prepare(batches[0], step);
    im.submit(current, 0);
    for (std::size_t i = 0; i < batches.size(); ++i) {
      // Read-ahead: the next batch is queued before this one is consumed.
      Impl::Batch next;
      if (i + 1 < batches.size()) {
        next = im.prepare(batches[i + 1], step);
        im.submit(next, i + 1);
      }
      im.collect_staged(current);
      finish(i, current);
      current = std::move(next);
    }
  }
  total.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
  return total;
}

FetchResult Fetcher::fetch(const std::vector<TokenSet>& wanted, std::uint32_t step) {
  FetchResult out;
  const FetchStats stats = fetch_step({wanted}, step, [&](std::size_t, FetchResult&& r) {
    out.entries = std::move(r.entries);
  });
  out.stats = stats;
  return out;
}

double pool_hit_rate(const TieredStore& store, const std::vector<std::vector<TokenSet>>& requests,
                     const std::vector<std::uint32_t>& resident) {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
  for (const auto& step : requests) {
    const auto groups = detail::group_by_extent(store, step);
    for (std::size_t s = 0; s < groups.size(); ++s) {
      total += groups[s].size();
      if (is_resident(resident, s)) hits += groups[s].size();
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

StallProfile profile_stalls(const TieredStore& store,
                            const std::vector<std::vector<TokenSet>>& requests,
                            std::uint64_t pool_bytes) {
  require(!requests.empty(), ErrorCode::kInvalidArgument, "stall profiling needs a non-empty trace");
  StallProfile profile;
  profile.misses.assign(store.stream_count(), 0);
  // With no resident segments every extent the staged strategy reads misses the pool.
  for (const auto& step : requests) {
    const auto groups = detail::group_by_extent(store, step);
    for (std::size_t s = 0; s < groups.size(); ++s) profile.misses[s] += groups[s].size();
  }
  std::vector<std::uint32_t> order(store.stream_count());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return profile.misses[a] > profile.misses[b];
  });
  // Two staging buffers of one extent each stay free for non-resident reads.
  const std::uint64_t staging = 2 * extent_bytes(store.plan().extent_capacity_tokens, store.dim());
  const std::uint64_t budget = pool_bytes > staging ? pool_bytes - staging : 0;
  std::uint64_t used = 0;
  for (std::uint32_t s : order) {
    const std::uint64_t len = store.plan().segments[s].length;
    if (used + len > budget) continue;
    used += len;
    profile.recommended.push_back(s);
  }
  return profile;
}

}  // namespace kvdrive
