#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvdrive/csv.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive::cli {

// Bad settings, reported with exit code 2 (runtime failures use 3).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings shared by every subcommand. Resolution order: flag, then config
// file, then these defaults (and the preset's own spec).
struct CommonSettings {
  std::string trace;
  std::string preset = "locality-high/n16384/b6.25";
  std::vector<std::uint64_t> seeds{1};
  std::string out = "-";
  std::uint32_t steps = 0;    // 0 keeps the preset's step count
  double budget = 0.0;        // fraction of the context; 0 keeps the preset's
  std::string selection;  // exact | index; empty = per-subcommand default
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CommonSettings, trace, preset, seeds, out, steps,
                                                budget, selection)

struct IndexBenchSettings {
  std::vector<std::size_t> centroids{64, 256, 1024};
  std::vector<std::string> variants{"hier", "minmax", "flat-kmeans"};
  std::size_t chunk_size = 4;
  double fanout = 4.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IndexBenchSettings, centroids, variants, chunk_size,
                                                fanout)

struct CacheBenchSettings {
  std::vector<double> windows{0, 1, 2, 3, 4};
  std::vector<std::string> policies{"LA", "LRU", "Belady"};
  double pool_factor = 1.25;
  double decay = 0.9;
  std::uint32_t from_step = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CacheBenchSettings, windows, policies, pool_factor,
                                                decay, from_step)

struct AllocSettings {
  std::vector<double> windows{0, 1, 2, 3, 4};  // candidate multiples of k per pair
  std::vector<double> uniform_windows{1, 2, 3};  // each sets one shared memory budget
  double decay = 0.9;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AllocSettings, windows, uniform_windows, decay)

struct TierBenchSettings {
  std::vector<std::string> strategies{"LayerWise", "SparseBlocks", "Hierarchical", "Balanced"};
  std::string layout = "semantic";  // semantic | sequential
  std::string requests = "misses";  // misses (after a x2 LA window) | selection
  std::size_t micro_batches = 4;
  std::uint64_t pool_bytes = 8ull << 20;
  bool pace_io = true;
  std::string store;  // default: a file next to --out, or in the temp directory
  std::string tiers;  // tier config JSON file
  double consume_time_s = 0.001;  // emulated attention time per micro-batch
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TierBenchSettings, strategies, layout, requests,
                                                micro_batches, pool_bytes, pace_io, store, tiers,
                                                consume_time_s)

struct PipelineSettings {
  std::vector<std::size_t> micro_batches{1, 2, 4, 8, 16, 32};
  std::vector<std::string> mixes{"balanced", "fetch-heavy", "select-heavy", "compute-heavy"};
  double unit_s = 1e-3;
  bool tune = true;
  std::vector<std::size_t> tune_centroids{256, 1024};
  std::vector<std::uint64_t> tune_cache_bytes{0, 1ull << 20, 2ull << 20, 4ull << 20};
  std::vector<std::size_t> tune_micro_batches{1, 2, 4};
  double tune_tolerance_s = 0.0;
  std::uint32_t prerun_steps = 4;
  double compute_time_s = 0.002;
  std::string tune_out;   // default: <out>.tune.json
  std::string gantt_out;  // optional schedule CSV of the SFC run for gantt_mix at gantt_m
  std::string gantt_mix = "balanced";
  std::size_t gantt_m = 4;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineSettings, micro_batches, mixes, unit_s, tune,
                                                tune_centroids, tune_cache_bytes, tune_micro_batches,
                                                tune_tolerance_s, prerun_steps, compute_time_s,
                                                tune_out, gantt_out, gantt_mix, gantt_m)

struct E2eSettings {
  std::size_t micro_batches = 4;
  double window_mult = 2.0;
  std::string policy = "LA";
  std::string strategy = "SparseBlocks";
  std::string layout = "semantic";
  double compute_time_s = 0.002;
  bool warmup = true;
  bool pace_io = true;
  std::string store;
  std::string report;  // default: <out>.report.json
  std::string tiers;   // when empty, Fast and Ram are sized from the prefix
  double fast_fraction = 0.03125;  // of the prefix KV bytes
  double ram_fraction = 0.125;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(E2eSettings, micro_batches, window_mult, policy,
                                                strategy, layout, compute_time_s, warmup, pace_io,
                                                store, report, tiers, fast_fraction, ram_fraction)

struct Workload {
  std::string name;
  std::uint64_t seed = 0;
  DecodingTrace trace;
  SparsityConfig sparsity;
};

// Generates (or reads) one workload at a time, in seed order.
void for_each_workload(const CommonSettings& common, const std::function<void(const Workload&)>& fn);

CsvTable index_bench(const CommonSettings& common, const IndexBenchSettings& s);
CsvTable cache_bench(const CommonSettings& common, const CacheBenchSettings& s);
CsvTable alloc_bench(const CommonSettings& common, const AllocSettings& s);
CsvTable tier_bench(const CommonSettings& common, const TierBenchSettings& s);

struct PipelineOutput {
  CsvTable table;
  nlohmann::json tune;  // null when tuning is off
  CsvTable gantt;
};
PipelineOutput pipeline_bench(const CommonSettings& common, const PipelineSettings& s);

struct E2eOutput {
  CsvTable summary;
  nlohmann::json report;
};
E2eOutput e2e(const CommonSettings& common, const E2eSettings& s);

// Writes one trace per seed; returns the paths written.
std::vector<std::string> gen_trace(const CommonSettings& common);

CsvSchema index_bench_schema();
CsvSchema cache_bench_schema();
CsvSchema alloc_schema();
CsvSchema tier_bench_schema();
CsvSchema pipeline_schema();
CsvSchema e2e_schema();

}  // namespace kvdrive::cli
