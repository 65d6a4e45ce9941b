#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvdrive/core.hpp"
#include "kvdrive/csv.hpp"
#include "kvdrive/index.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive {

// Bytes of one KV entry (key + value, f32).
inline std::uint64_t entry_bytes(std::size_t dim) { return 2ull * dim * sizeof(float); }

enum class EvictionKind { kLookahead, kLru, kBelady };
const char* to_string(EvictionKind kind);
EvictionKind parse_eviction(const std::string& name);

// Per-stream sequence of requested token sets, one per step. Belady reads it
// to find each token's next use.
class FutureAccess {
 public:
  explicit FutureAccess(const std::vector<TokenSet>& requests);

  // First step > `step` at which `token` is requested; UINT32_MAX if never.
  std::uint32_t next_use(TokenIndex token, std::uint32_t step) const;

 private:
  std::unordered_map<TokenIndex, std::vector<std::uint32_t>> uses_;
};

struct EvictionPolicy {
  EvictionKind kind = EvictionKind::kLookahead;
  std::size_t pool_size = 0;  // lookahead candidate pool M
  double decay = 0.9;         // per-step decay of unscored residents
  std::shared_ptr<const FutureAccess> future;  // Belady only
};

struct LookupResult {
  TokenSet hits;
  TokenSet misses;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t bytes_fetched = 0;
};

class WindowCache {
 public:
  WindowCache(LayerHeadId owner, std::size_t capacity_tokens, TokenSet pinned, std::size_t dim);

  LayerHeadId owner() const noexcept { return owner_; }
  std::size_t capacity() const noexcept { return capacity_; }
  const TokenSet& pinned() const noexcept { return pinned_; }
  const CacheStats& stats() const noexcept { return stats_; }
  std::size_t size() const noexcept { return resident_.size(); }
  std::uint32_t step() const noexcept { return step_; }
  std::uint64_t entry_size() const noexcept { return entry_bytes_; }

  bool is_resident(TokenIndex token) const { return resident_.contains(token); }
  TokenSet resident_tokens() const;

  // Contents unchanged; counters updated. Misses are charged one entry each.
  LookupResult lookup(const TokenSet& wanted);

  // Makes every token of `selection` resident and evicts down to capacity.
  // `step_scores` holds this step's scored candidates (the lookahead pool).
  // Advances the internal step counter. Returns the evicted tokens.
  TokenSet admit_evict(const TokenSet& selection, const std::vector<ScoredToken>& step_scores,
                       const EvictionPolicy& policy);

  // Advances the step counter without admitting anything (capacity 0).
  void skip_step() { ++step_; }

 private:
  struct Slot {
    float score = 0.0f;
    std::uint32_t scored_step = 0;
    std::uint32_t last_access = 0;
  };

  double effective_score(const Slot& slot) const;

  LayerHeadId owner_;
  std::size_t capacity_;
  double decay_ = 0.9;
  TokenSet pinned_;
  std::uint64_t entry_bytes_;
  std::unordered_map<TokenIndex, Slot> resident_;
  CacheStats stats_;
  std::uint32_t step_ = 0;
};

enum class SelectionMode { kExact, kIndex };

struct SelectionConfig {
  SelectionMode mode = SelectionMode::kExact;
  SparsityConfig sparsity;
  double pool_factor = 1.25;  // M = pool_factor * budget_k
  std::size_t chunk_size = 4;
  std::size_t tokens_per_centroid = 16;
  double fanout = 4.0;
  std::uint64_t index_seed = 7;

  std::size_t pool_size() const {
    return static_cast<std::size_t>(pool_factor * static_cast<double>(sparsity.budget_k));
  }
};

// Per step, per stream selection results. Independent of any cache, so one
// SelectionTrace drives every policy and window size.
struct SelectionTrace {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::size_t dim = 0;
  std::size_t context_length = 0;
  SparsityConfig sparsity;
  std::vector<std::vector<Selection>> steps;  // [step][stream]

  std::size_t stream_count() const { return static_cast<std::size_t>(layers) * heads; }
  std::vector<TokenSet> requests(std::size_t stream) const;
};

std::vector<HierIndex> build_indexes(const DecodingTrace& trace, const SelectionConfig& cfg);

Selection select_for(const DecodingTrace& trace, const std::vector<HierIndex>& indexes,
                     const SelectionConfig& cfg, std::size_t step, std::size_t stream);

SelectionTrace compute_selections(const DecodingTrace& trace, const SelectionConfig& cfg,
                                  const std::vector<HierIndex>* indexes = nullptr);

struct StepRecord {
  std::uint32_t step = 0;
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t hits = 0;
  std::uint32_t misses = 0;
  std::uint64_t fetch_bytes = 0;

  bool operator==(const StepRecord&) const = default;
};

struct CacheReport {
  std::string policy;
  double window_mult = 0.0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> records;  // ordered by (step, layer, head)

  double hit_rate(std::uint32_t from_step = 0) const;
  // Mean over steps >= from_step of fetch bytes summed across streams.
  double mean_step_fetch_bytes(std::uint32_t from_step = 0) const;
  std::uint64_t total_fetch_bytes(std::uint32_t from_step = 0) const;
  std::map<LayerHeadId, double> stream_hit_rates(std::uint32_t from_step = 0) const;

  bool operator==(const CacheReport&) const = default;
};

CsvSchema cache_report_schema();
void append_csv(CsvTable& table, const CacheReport& report);

struct CacheRunConfig {
  EvictionPolicy policy;
  double window_mult = 2.0;
  std::uint64_t seed = 0;
  // Per-stream capacities override window_mult when non-empty.
  std::vector<std::size_t> capacities;
};

std::vector<WindowCache> make_caches(const SelectionTrace& selections, const CacheRunConfig& cfg);

// Lookup, fetch accounting and admit/evict for one (step, stream). Shared by
// run_trace and the executors so their decisions coincide.
StepRecord step_cache(WindowCache& cache, const Selection& selection, const EvictionPolicy& policy,
                      std::uint32_t step, TokenSet* evicted = nullptr);
LookupResult lookup_step(WindowCache& cache, const Selection& selection, StepRecord& record);
TokenSet update_step(WindowCache& cache, const Selection& selection, const EvictionPolicy& policy);

CacheReport simulate_caches(const SelectionTrace& selections, const CacheRunConfig& cfg);

CacheReport run_trace(const DecodingTrace& trace, const SelectionConfig& selection,
                      const CacheRunConfig& cfg);

// ---------------------------------------------------------------------------
// 2D window scaling.

struct BenefitProfile {
  std::vector<LayerHeadId> pairs;
  std::vector<std::vector<std::size_t>> windows;  // candidate sizes per pair, ascending
  std::vector<std::vector<double>> benefit;       // bytes saved vs the smallest size
  std::vector<std::vector<double>> cost;          // resident bytes

  std::size_t pair_count() const { return pairs.size(); }
  void validate() const;
};

struct Allocation {
  std::map<LayerHeadId, std::size_t> chosen;  // window size per pair
  std::vector<std::size_t> choice;            // candidate index per pair
  double total_cost = 0.0;
  double total_benefit = 0.0;
};

// Runs the lookahead cache for every stream and candidate window (tokens) and
// converts fetched bytes into benefit/cost. Benefits are clamped to be
// non-decreasing in the window size.
BenefitProfile profile_benefit(const SelectionTrace& selections,
                               const std::vector<std::size_t>& candidate_windows,
                               const EvictionPolicy& policy);

Allocation evaluate_allocation(const BenefitProfile& profile, const std::vector<std::size_t>& choice);
Allocation solve_mckp_greedy(const BenefitProfile& profile, double budget);
Allocation solve_mckp_exact(const BenefitProfile& profile, double budget);

}  // namespace kvdrive
