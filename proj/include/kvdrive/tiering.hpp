#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kvdrive/core.hpp"
#include "kvdrive/csv.hpp"
#include "kvdrive/index.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive {

// ---------------------------------------------------------------------------
// Tier cost model.

enum class Tier : std::uint8_t { kFast = 0, kRam = 1, kDisk = 2 };
const char* to_string(Tier tier);

struct TierSpec {
  Tier name = Tier::kDisk;
  std::uint64_t capacity_bytes = 0;
  double bandwidth_bytes_per_s = 1.0;  // towards the next-faster tier
  double latency_s = 0.0;              // per transfer operation

  double transfer_time(std::uint64_t bytes, std::uint64_t ops) const {
    return latency_s * static_cast<double>(ops) + static_cast<double>(bytes) / bandwidth_bytes_per_s;
  }
};

struct TierConfig {
  TierSpec fast{Tier::kFast, 64ull << 20, 1.0e12, 0.0};
  TierSpec ram{Tier::kRam, 1ull << 30, 25.0e9, 10.0e-6};
  TierSpec disk{Tier::kDisk, 64ull << 30, 3.0e9, 80.0e-6};

  const TierSpec& operator[](Tier t) const;
  void validate() const;
};

TierConfig parse_tier_config(std::string_view json_text);
std::string tier_config_json(const TierConfig& cfg);

// ---------------------------------------------------------------------------
// Importance-guided warm-up.

struct ImportanceProfile {
  std::size_t observation_window_len = 0;
  std::vector<std::vector<double>> per_stream;  // [stream][token]
  std::vector<double> global;                   // mean over streams

  std::size_t token_count() const { return global.size(); }
};

// Sum over observation queries of softmax(logit_scale * q.k) over the prefix.
std::vector<double> attention_mass(const Matrix& keys, const Matrix& obs_queries,
                                   double logit_scale = 1.0);

// Per-stream masses with logit scale sqrt(d) (keys and queries are unit norm).
ImportanceProfile compute_importance(const DecodingTrace& trace);

struct Placement {
  std::vector<Tier> tier;  // fastest tier holding each token; every token is also on Disk
  std::uint64_t bytes_per_token = 0;

  std::size_t count(Tier t) const;
  TokenSet tokens_in(Tier t) const;
};

// Pinned tokens go to Fast first; the rest fill Fast then Ram in descending
// score order (ties: lower token index). Every token is persisted on Disk.
Placement warmup_placement(const std::vector<double>& scores, const TierConfig& tiers,
                           std::uint64_t bytes_per_token, const TokenSet& pinned);

// ---------------------------------------------------------------------------
// Disk layout.

struct Extent {
  std::uint32_t extent_id = 0;  // position within the owner segment
  LayerHeadId owner;
  std::vector<TokenIndex> token_ids;
  std::uint64_t byte_offset = 0;  // within the segment
  std::uint64_t byte_length = 0;
};

std::uint64_t extent_bytes(std::size_t tokens, std::size_t dim);

struct Segment {
  LayerHeadId owner;
  std::uint64_t file_offset = 0;
  std::uint64_t length = 0;
  std::vector<Extent> extents;
};

struct TokenLocation {
  std::uint32_t extent = 0;
  std::uint32_t slot = 0;
};

struct LayoutPlan {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t dim = 0;
  std::uint32_t context_length = 0;
  std::uint32_t extent_capacity_tokens = 64;
  std::vector<Segment> segments;  // ordered by (layer, head)

  std::size_t stream_count() const { return segments.size(); }
  std::uint64_t file_size() const;
  void validate() const;
  // Token → (extent, slot) per stream.
  std::vector<std::vector<TokenLocation>> locations() const;
};

inline constexpr std::uint32_t kDefaultExtentTokens = 64;
inline constexpr std::uint64_t kSegmentAlignment = 4096;

// Chunk co-selection counts from a warm-up selection trace, per stream at
// centroid granularity.
struct CoAccessStats {
  std::vector<std::vector<std::uint64_t>> access;  // [stream][centroid]
  std::vector<std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t>> pairs;

  std::uint64_t co_access(std::size_t stream, std::uint32_t a, std::uint32_t b) const;
};

CoAccessStats collect_co_access(const std::vector<HierIndex>& indexes,
                                const std::vector<std::vector<TokenSet>>& requests);

// Centroid visiting order for one stream: most accessed first, then greedily
// the unvisited centroid most co-accessed with the previous one.
std::vector<std::uint32_t> centroid_order(const HierIndex& index, const CoAccessStats& stats,
                                          std::size_t stream);

LayoutPlan plan_layout(const std::vector<HierIndex>& indexes, const CoAccessStats& co_access,
                       std::uint32_t layers, std::uint32_t heads,
                       std::uint32_t extent_capacity_tokens = kDefaultExtentTokens);

// Token-order packing, the baseline layout.
LayoutPlan sequential_layout(std::uint32_t layers, std::uint32_t heads, std::uint32_t dim,
                             std::uint32_t context_length,
                             std::uint32_t extent_capacity_tokens = kDefaultExtentTokens);

// Number of extents touched when reading `wanted` for one stream.
std::size_t extents_touched(const LayoutPlan& plan, std::size_t stream, const TokenSet& wanted);

// ---------------------------------------------------------------------------
// Store file ("KVDX", version 1).

inline constexpr std::uint32_t kStoreFormatVersion = 1;

void write_store(const std::filesystem::path& path, const std::vector<Matrix>& keys,
                 const std::vector<Matrix>& values, const LayoutPlan& plan,
                 const std::vector<HierIndex>* indexes = nullptr);
void write_store(const std::filesystem::path& path, const DecodingTrace& trace,
                 const LayoutPlan& plan, const std::vector<HierIndex>* indexes = nullptr);

class TieredStore {
 public:
  static std::shared_ptr<TieredStore> open(const std::filesystem::path& path);
  ~TieredStore();
  TieredStore(const TieredStore&) = delete;
  TieredStore& operator=(const TieredStore&) = delete;

  const LayoutPlan& plan() const noexcept { return plan_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  std::size_t dim() const noexcept { return plan_.dim; }
  std::size_t stream_count() const noexcept { return plan_.segments.size(); }
  const TokenLocation& locate(std::size_t stream, TokenIndex token) const;
  const std::vector<HierIndex>& indexes() const noexcept { return indexes_; }

  // Thread-safe positional read.
  void read_at(std::uint64_t offset, std::uint64_t length, std::byte* out) const;

  // Direct reads of exactly the wanted tokens; results sorted by token.
  std::vector<std::vector<KVEntry>> read_entries(const std::vector<TokenSet>& wanted) const;

 private:
  TieredStore() = default;

  std::filesystem::path path_;
  int fd_ = -1;
  LayoutPlan plan_;
  std::vector<std::vector<TokenLocation>> locations_;
  std::vector<HierIndex> indexes_;
};

// ---------------------------------------------------------------------------
// Fetch strategies.

enum class FetchStrategy { kLayerWise, kSparseBlocks, kHierarchical, kBalanced };
const char* to_string(FetchStrategy s);
FetchStrategy parse_strategy(const std::string& name);

struct ReadRange {
  std::uint32_t stream = 0;
  std::uint32_t first_extent = 0;
  std::uint32_t last_extent = 0;  // inclusive
  std::uint64_t offset = 0;       // file offset
  std::uint64_t length = 0;
};

struct FetchPlan {
  FetchStrategy strategy = FetchStrategy::kSparseBlocks;
  std::vector<ReadRange> requests;  // sorted by file offset
  std::uint64_t predicted_bytes = 0;
  std::uint64_t predicted_io_ops = 0;
  std::uint64_t pool_hit_extents = 0;  // served by resident segments
};

// `resident` lists streams whose whole segment is held in the pool.
FetchPlan plan_fetch(const TieredStore& store, const std::vector<TokenSet>& wanted,
                     FetchStrategy strategy, const std::vector<std::uint32_t>& resident = {});

struct FetchStats {
  FetchStrategy strategy = FetchStrategy::kSparseBlocks;
  std::uint32_t step = 0;
  std::uint64_t bytes_moved = 0;
  std::uint64_t io_ops = 0;
  double predicted_time_s = 0.0;
  double wall_time_s = 0.0;
  std::uint64_t pool_hits = 0;    // extents served by resident segments
  std::uint64_t pool_misses = 0;  // extents read from disk
  std::uint64_t upper_tier_hits = 0;  // tokens served by Fast/Ram placement

  void add(const FetchStats& other);
};

CsvSchema fetch_stats_schema();
void append_csv(CsvTable& table, const FetchStats& stats);

struct FetchOptions {
  std::uint64_t pool_bytes = 8ull << 20;
  // Sleep each disk read up to its cost-model time, so the timing follows the
  // modelled device instead of the page cache.
  bool pace_io = true;
  std::vector<std::uint32_t> resident_streams;  // Balanced only
  const Placement* placement = nullptr;         // tokens served from Fast/Ram copies
};

struct FetchResult {
  std::vector<std::vector<KVEntry>> entries;  // [stream], sorted by token
  FetchStats stats;
};

using BatchConsumer = std::function<void(std::size_t batch, FetchResult&& result)>;

class Fetcher {
 public:
  Fetcher(std::shared_ptr<const TieredStore> store, FetchStrategy strategy, TierConfig tiers,
          FetchOptions options = {});
  ~Fetcher();
  Fetcher(const Fetcher&) = delete;
  Fetcher& operator=(const Fetcher&) = delete;

  FetchStrategy strategy() const noexcept { return strategy_; }

  // One request, read and decoded synchronously.
  FetchResult fetch(const std::vector<TokenSet>& wanted, std::uint32_t step = 0);

  // A step split into micro-batches. Hierarchical and Balanced read batch i+1
  // while the consumer handles batch i.
  FetchStats fetch_step(const std::vector<std::vector<TokenSet>>& batches, std::uint32_t step,
                        const BatchConsumer& consume);

  // Stats of loading the resident segments (Balanced), paid once.
  const FetchStats& warm_stats() const noexcept { return warm_stats_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  FetchStrategy strategy_;
  FetchStats warm_stats_;
};

// Fraction of requested extents that resident segments would serve.
double pool_hit_rate(const TieredStore& store, const std::vector<std::vector<TokenSet>>& requests,
                     const std::vector<std::uint32_t>& resident);

// Dry run of the staged strategy: counts buffer-pool misses (extent reads)
// per segment and recommends the highest-miss segments that fit pool_bytes
// minus two staging extents (ties: lower (layer, head)).
struct StallProfile {
  std::vector<std::uint64_t> misses;  // per stream
  std::vector<std::uint32_t> recommended;
};

StallProfile profile_stalls(const TieredStore& store,
                            const std::vector<std::vector<TokenSet>>& requests,
                            std::uint64_t pool_bytes);

}  // namespace kvdrive
