#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kvdrive/cache.hpp"
#include "kvdrive/csv.hpp"
#include "kvdrive/tiering.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive {

// ---------------------------------------------------------------------------
// Discrete-event pipeline simulator.

enum class Stage { kSelect, kHitMiss, kFetch, kCompute, kMeta };
enum class Resource { kGpu, kCpu, kIo };
const char* to_string(Stage s);
const char* to_string(Resource r);
Resource resource_of(Stage s);

// Per micro-batch select/hitmiss/fetch times; compute and meta are whole-step.
struct StageCosts {
  std::vector<double> select;
  std::vector<double> hitmiss;
  std::vector<double> fetch;
  double compute = 0.0;
  double meta = 0.0;

  static StageCosts uniform(std::size_t m, double t_select, double t_hitmiss, double t_fetch,
                            double t_compute, double t_meta);

  std::size_t micro_batches() const { return select.size(); }
  void validate() const;
};

struct ScheduleEvent {
  Stage stage = Stage::kSelect;
  int micro_batch = -1;  // -1 for whole-step stages
  Resource resource = Resource::kGpu;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct PipelineSchedule {
  std::vector<ScheduleEvent> events;
  double makespan_s = 0.0;
  double stall_s[3] = {0.0, 0.0, 0.0};  // indexed by Resource

  double stall(Resource r) const { return stall_s[static_cast<int>(r)]; }
};

// Select i can start only after fetch i-3 completes (three micro-batches in flight).
inline constexpr std::size_t kOverlapDepth = 3;

PipelineSchedule simulate_sequential(const StageCosts& costs);
PipelineSchedule simulate_sfc(const StageCosts& costs);

// Empty when the schedule respects resource exclusivity, stage durations and
// precedence; otherwise a description of the first violation.
std::string check_schedule(const PipelineSchedule& schedule, const StageCosts& costs);

CsvSchema schedule_schema();
void append_csv(CsvTable& table, const PipelineSchedule& schedule);

// ---------------------------------------------------------------------------
// Executors over the tiered store.

enum class ComputeMode { kSleep, kSpin };

struct ExecutorConfig {
  SelectionConfig selection;
  EvictionPolicy policy;
  double window_mult = 2.0;
  std::size_t micro_batches = 2;  // streams are split into this many contiguous groups
  FetchStrategy strategy = FetchStrategy::kSparseBlocks;
  FetchOptions fetch;
  TierConfig tiers;
  double compute_time_s = 0.002;  // per step
  ComputeMode compute_mode = ComputeMode::kSleep;
  double watchdog_s = 30.0;
  std::uint32_t max_steps = 0;  // 0 = all trace steps
  std::uint64_t seed = 0;
};

struct ExecutionReport {
  CacheReport cache;
  std::uint64_t decision_digest = 0;  // selections, misses and evictions in order
  double fetched_checksum = 0.0;      // sum of every fetched key/value element
  double wall_time_s = 0.0;
  double stage_time_s[5] = {0.0, 0.0, 0.0, 0.0, 0.0};  // busy time per Stage
  FetchStats fetch;
  std::uint32_t steps = 0;

  double steps_per_s() const { return wall_time_s > 0.0 ? steps / wall_time_s : 0.0; }
  double stage_time(Stage s) const { return stage_time_s[static_cast<int>(s)]; }
};

// Contiguous stream groups, one per micro-batch.
std::vector<std::vector<std::size_t>> micro_batch_streams(std::size_t streams, std::size_t m);

// Single-threaded reference: the same stage functions in program order.
ExecutionReport run_sequential(const DecodingTrace& trace, std::shared_ptr<const TieredStore> store,
                               const ExecutorConfig& cfg);

// Selector, hit/miss+fetcher and computer threads joined by bounded queues.
// Meta updates run on the fetcher thread while the computer works.
ExecutionReport run_executor(const DecodingTrace& trace, std::shared_ptr<const TieredStore> store,
                             const ExecutorConfig& cfg);

// ---------------------------------------------------------------------------
// Parameter tuning.

struct TuneGrid {
  std::vector<std::size_t> n_centroids;
  std::vector<std::uint64_t> cache_bytes;
  std::vector<std::size_t> micro_batches;
  double equilibrium_tolerance_s = 0.0;  // gaps within this are treated as equal
};

using CostModel = std::function<StageCosts(std::size_t n_centroids, std::uint64_t cache_bytes,
                                           std::size_t micro_batches)>;

struct TuneCandidate {
  std::size_t n_centroids = 0;
  std::uint64_t cache_bytes = 0;
  std::size_t micro_batches = 0;
  double throughput = 0.0;  // steps per second of the simulated SFC schedule
};

struct TuneResult {
  std::size_t n_centroids = 0;
  std::uint64_t cache_bytes = 0;
  std::size_t micro_batches = 0;
  double throughput = 0.0;
  std::vector<double> equilibrium_gap_s;   // per cache_bytes grid point
  std::vector<TuneCandidate> evaluated;    // (n_centroids, micro_batches) at the chosen cache
};

TuneResult tune(const TuneGrid& grid, const CostModel& model);

// Measured pre-run: selection time is timed on the host, hit/miss time is
// timed around the cache lookups, fetch time comes from the disk cost model.
// The returned model keeps a reference to `trace`.
CostModel prerun_cost_model(const DecodingTrace& trace, const SelectionConfig& base,
                            const EvictionPolicy& policy, const TierConfig& tiers,
                            double compute_time_s, std::uint32_t prerun_steps);

// ---------------------------------------------------------------------------
// Roofline placement.

// ComputeNear runs attention on the CPU next to the data; ComputeFar moves the
// missed entries to the GPU.
enum class ComputeSite { kComputeNear, kComputeFar };
const char* to_string(ComputeSite s);

struct RooflineModel {
  double bytes_per_token_miss = 512.0;
  double flops_per_token = 2048.0;
  double cpu_flops = 2.0e11;
  double gpu_flops = 3.12e14;
  double link_bw = 25.0e9;

  double threshold_intensity() const { return cpu_flops / link_bw; }
};

struct RooflineDecision {
  ComputeSite site = ComputeSite::kComputeNear;
  double intensity = 0.0;  // flops per transferred byte; infinity when nothing moves
  double gpu_attainable = 0.0;
};

RooflineDecision roofline_placement(double hit_rate, const RooflineModel& model = {});

}  // namespace kvdrive
