#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <limits>
#include <mutex>

#include "kvdrive/pipeline.hpp"

namespace kvdrive {

namespace {

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TuneResult tune(const TuneGrid& grid, const CostModel& model) {
  const auto n_cs = sorted_unique(grid.n_centroids);
  const auto caches = sorted_unique(grid.cache_bytes);
  const auto mbs = sorted_unique(grid.micro_batches);
  require(!n_cs.empty() && !caches.empty() && !mbs.empty(), ErrorCode::kInvalidArgument,
          "every tuning grid needs at least one value");
  require(mbs.front() >= 1, ErrorCode::kInvalidArgument, "micro-batch counts must be >= 1");
  require(grid.equilibrium_tolerance_s >= 0.0, ErrorCode::kInvalidArgument,
          "equilibrium tolerance must be >= 0");

  TuneResult result;
  // Cache size: the smallest one whose hit/miss vs fetch gap is within
  // tolerance of the smallest gap on the grid.
  for (std::uint64_t c : caches) {
    const StageCosts costs = model(n_cs.front(), c, mbs.front());
    costs.validate();
    result.equilibrium_gap_s.push_back(std::fabs(sum(costs.hitmiss) - sum(costs.fetch)));
  }
  const double best_gap = *std::min_element(result.equilibrium_gap_s.begin(), result.equilibrium_gap_s.end());
  for (std::size_t i = 0; i < caches.size(); ++i) {
    if (result.equilibrium_gap_s[i] <= best_gap + grid.equilibrium_tolerance_s) {
      result.cache_bytes = caches[i];
      break;
    }
  }

  // Centroid count and micro-batches: argmax of simulated throughput,
  // smallest values on ties.
  for (std::size_t n_c : n_cs) {
    for (std::size_t m : mbs) {
      const StageCosts costs = model(n_c, result.cache_bytes, m);
      const double makespan = simulate_sfc(costs).makespan_s;
      TuneCandidate cand{n_c, result.cache_bytes, m,
                         makespan > 0.0 ? 1.0 / makespan : std::numeric_limits<double>::infinity()};
      result.evaluated.push_back(cand);
      if (result.evaluated.size() == 1 || cand.throughput > result.throughput) {
        result.n_centroids = n_c;
        result.micro_batches = m;
        result.throughput = cand.throughput;
      }
    }
  }
  return result;
}

CostModel prerun_cost_model(const DecodingTrace& trace, const SelectionConfig& base,
                            const EvictionPolicy& policy, const TierConfig& tiers,
                            double compute_time_s, std::uint32_t prerun_steps) {
  require(prerun_steps >= 1, ErrorCode::kInvalidArgument, "pre-run needs at least one step");
  require(policy.kind != EvictionKind::kBelady, ErrorCode::kInvalidArgument,
          "the pre-run measures online policies only");
  const std::uint32_t steps =
      std::min<std::uint32_t>(prerun_steps, static_cast<std::uint32_t>(trace.steps()));
  const std::size_t streams = trace.stream_count();

  // Per-stream mean seconds per step for one (n_centroids, cache_bytes) pair.
  struct Measured {
    std::vector<double> select, hitmiss, fetch;
    double meta = 0.0;
  };
  using Clock = std::chrono::steady_clock;
  auto memo = std::make_shared<std::map<std::pair<std::size_t, std::uint64_t>, Measured>>();
  auto mu = std::make_shared<std::mutex>();

  auto measure = [&trace, base, policy, tiers, steps, streams](std::size_t n_c, std::uint64_t cache_bytes) {
    SelectionConfig sel = base;
    if (sel.mode == SelectionMode::kIndex) {
      sel.tokens_per_centroid = std::max<std::size_t>(1, trace.context_length() / std::max<std::size_t>(1, n_c));
    }
    const auto indexes = sel.mode == SelectionMode::kIndex ? build_indexes(trace, sel) : std::vector<HierIndex>{};

    SelectionTrace shape;
    shape.layers = trace.spec().layers;
    shape.heads = trace.spec().heads;
    shape.dim = trace.dim();
    shape.context_length = trace.context_length();
    shape.sparsity = sel.sparsity;
    CacheRunConfig run;
    run.policy = policy;
    // A window smaller than one step's selection cannot admit it; such a
    // budget degenerates to no retention.
    const std::uint64_t per_stream = cache_bytes / streams / entry_bytes(trace.dim());
    const std::size_t capacity = per_stream >= sel.sparsity.budget_k ? per_stream : 0;
    run.capacities.assign(streams, capacity);
    auto caches = make_caches(shape, run);

    Measured m;
    m.select.assign(streams, 0.0);
    m.hitmiss.assign(streams, 0.0);
    m.fetch.assign(streams, 0.0);
    for (std::uint32_t t = 0; t < steps; ++t) {
      for (std::size_t s = 0; s < streams; ++s) {
        auto t0 = Clock::now();
        const Selection selection = select_for(trace, indexes, sel, t, s);
        auto t1 = Clock::now();
        StepRecord rec;
        const LookupResult r = lookup_step(caches[s], selection, rec);
        auto t2 = Clock::now();
        update_step(caches[s], selection, policy);
        auto t3 = Clock::now();
        m.select[s] += std::chrono::duration<double>(t1 - t0).count();
        m.hitmiss[s] += std::chrono::duration<double>(t2 - t1).count();
        m.meta += std::chrono::duration<double>(t3 - t2).count();
        // Every miss is charged one device read.
        m.fetch[s] += tiers.disk.transfer_time(rec.fetch_bytes, r.misses.size());
      }
    }
    for (auto* v : {&m.select, &m.hitmiss, &m.fetch}) {
      for (double& x : *v) x /= steps;
    }
    m.meta /= steps;
    return m;
  };

  return [=](std::size_t n_c, std::uint64_t cache_bytes, std::size_t micro_batches) {
    Measured m;
    {
      std::lock_guard lock(*mu);
      auto it = memo->find({n_c, cache_bytes});
      if (it == memo->end()) it = memo->emplace(std::make_pair(n_c, cache_bytes), measure(n_c, cache_bytes)).first;
      m = it->second;
    }
    StageCosts costs;
    for (const auto& group : micro_batch_streams(streams, micro_batches)) {
      double sel = 0.0, hm = 0.0, f = 0.0;
      for (std::size_t s : group) {
        sel += m.select[s];
        hm += m.hitmiss[s];
        f += m.fetch[s];
      }
      costs.select.push_back(sel);
      costs.hitmiss.push_back(hm);
      costs.fetch.push_back(f);
    }
    costs.compute = compute_time_s;
    costs.meta = m.meta;
    return costs;
  };
}

}  // namespace kvdrive
