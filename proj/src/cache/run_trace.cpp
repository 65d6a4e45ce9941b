#include <algorithm>
#include <cmath>

#include "kvdrive/cache.hpp"
#include "kvdrive/rng.hpp"

namespace kvdrive {

std::vector<TokenSet> SelectionTrace::requests(std::size_t stream) const {
  std::vector<TokenSet> out;
  out.reserve(steps.size());
  for (const auto& step : steps) out.push_back(step.at(stream).critical);
  return out;
}

std::vector<HierIndex> build_indexes(const DecodingTrace& trace, const SelectionConfig& cfg) {
  std::vector<HierIndex> out;
  out.reserve(trace.stream_count());
  const std::size_t n = trace.context_length();
  const std::size_t chunks = (n + cfg.chunk_size - 1) / cfg.chunk_size;
  const std::size_t n_c =
      std::clamp<std::size_t>(n / std::max<std::size_t>(cfg.tokens_per_centroid, 1), 1, chunks);
  for (std::size_t s = 0; s < trace.stream_count(); ++s) {
    out.push_back(build_index(trace.keys(s), cfg.chunk_size, n_c, hash_combine(cfg.index_seed, s)));
  }
  return out;
}

Selection select_for(const DecodingTrace& trace, const std::vector<HierIndex>& indexes,
                     const SelectionConfig& cfg, std::size_t step, std::size_t stream) {
  const auto query = trace.query(step, stream);
  if (cfg.mode == SelectionMode::kExact) {
    return select_exact(trace.keys(stream), query, cfg.sparsity, cfg.pool_size());
  }
  SelectOptions options;
  options.fanout = cfg.fanout;
  options.pool_size = cfg.pool_size();
  return select_critical(indexes.at(stream), trace.keys(stream), query, cfg.sparsity, options);
}

SelectionTrace compute_selections(const DecodingTrace& trace, const SelectionConfig& cfg,
                                  const std::vector<HierIndex>* indexes) {
  std::vector<HierIndex> built;
  if (cfg.mode == SelectionMode::kIndex && indexes == nullptr) {
    built = build_indexes(trace, cfg);
    indexes = &built;
  }
  static const std::vector<HierIndex> kNone;
  const auto& idx = indexes != nullptr ? *indexes : kNone;

  SelectionTrace out;
  out.layers = trace.spec().layers;
  out.heads = trace.spec().heads;
  out.dim = trace.dim();
  out.context_length = trace.context_length();
  out.sparsity = cfg.sparsity;
  out.steps.resize(trace.steps());
  for (std::size_t t = 0; t < trace.steps(); ++t) {
    out.steps[t].reserve(trace.stream_count());
    for (std::size_t s = 0; s < trace.stream_count(); ++s) {
      out.steps[t].push_back(select_for(trace, idx, cfg, t, s));
    }
  }
  return out;
}

double CacheReport::hit_rate(std::uint32_t from_step) const {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
  for (const auto& r : records) {
    if (r.step < from_step) continue;
    hits += r.hits;
    total += r.hits + r.misses;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::uint64_t CacheReport::total_fetch_bytes(std::uint32_t from_step) const {
  std::uint64_t bytes = 0;
  for (const auto& r : records) {
    if (r.step >= from_step) bytes += r.fetch_bytes;
  }
  return bytes;
}

double CacheReport::mean_step_fetch_bytes(std::uint32_t from_step) const {
  std::uint32_t last = 0;
  bool any = false;
  for (const auto& r : records) {
    if (r.step < from_step) continue;
    last = std::max(last, r.step);
    any = true;
  }
  if (!any) return 0.0;
  return static_cast<double>(total_fetch_bytes(from_step)) /
         static_cast<double>(last - from_step + 1);
}

std::map<LayerHeadId, double> CacheReport::stream_hit_rates(std::uint32_t from_step) const {
  std::map<LayerHeadId, std::pair<std::uint64_t, std::uint64_t>> acc;
  for (const auto& r : records) {
    if (r.step < from_step) continue;
    auto& [hits, total] = acc[LayerHeadId{r.layer, r.head}];
    hits += r.hits;
    total += r.hits + r.misses;
  }
  std::map<LayerHeadId, double> out;
  for (const auto& [id, ht] : acc) {
    out[id] = ht.second == 0 ? 0.0 : static_cast<double>(ht.first) / static_cast<double>(ht.second);
  }
  return out;
}

CsvSchema cache_report_schema() {
  return {{"step", ColumnType::kInteger},    {"layer", ColumnType::kInteger},
          {"head", ColumnType::kInteger},    {"hits", ColumnType::kInteger},
          {"misses", ColumnType::kInteger},  {"fetch_bytes", ColumnType::kInteger},
          {"policy", ColumnType::kText},     {"window_mult", ColumnType::kReal},
          {"seed", ColumnType::kInteger}};
}

void append_csv(CsvTable& table, const CacheReport& report) {
  for (const auto& r : report.records) {
    table.row() << r.step << r.layer << r.head << r.hits << r.misses << r.fetch_bytes
                << report.policy << report.window_mult << report.seed;
  }
}

std::vector<WindowCache> make_caches(const SelectionTrace& selections, const CacheRunConfig& cfg) {
  const std::size_t streams = selections.stream_count();
  require(cfg.capacities.empty() || cfg.capacities.size() == streams, ErrorCode::kInvalidArgument,
          "capacities must list one window per stream");
  require(cfg.window_mult >= 0.0, ErrorCode::kInvalidArgument, "window multiplier must be >= 0");
  const TokenSet pinned = selections.sparsity.pinned_tokens(selections.context_length);
  const auto default_capacity = static_cast<std::size_t>(
      std::llround(cfg.window_mult * static_cast<double>(selections.sparsity.budget_k)));
  std::vector<WindowCache> caches;
  caches.reserve(streams);
  for (std::size_t s = 0; s < streams; ++s) {
    const std::size_t capacity = cfg.capacities.empty() ? default_capacity : cfg.capacities[s];
    caches.emplace_back(stream_id(s, selections.heads), capacity, pinned, selections.dim);
  }
  return caches;
}

LookupResult lookup_step(WindowCache& cache, const Selection& selection, StepRecord& record) {
  LookupResult r = cache.lookup(selection.critical);
  record.layer = cache.owner().layer;
  record.head = cache.owner().head;
  record.hits = static_cast<std::uint32_t>(r.hits.size());
  record.misses = static_cast<std::uint32_t>(r.misses.size());
  record.fetch_bytes = r.misses.size() * cache.entry_size();
  return r;
}

TokenSet update_step(WindowCache& cache, const Selection& selection, const EvictionPolicy& policy) {
  // A zero window retains nothing; every step refetches its selection.
  if (cache.capacity() == 0) {
    cache.skip_step();
    return {};
  }
  return cache.admit_evict(selection.critical, selection.pool, policy);
}

StepRecord step_cache(WindowCache& cache, const Selection& selection, const EvictionPolicy& policy,
                      std::uint32_t step, TokenSet* evicted) {
  StepRecord record;
  record.step = step;
  lookup_step(cache, selection, record);
  TokenSet out = update_step(cache, selection, policy);
  if (evicted != nullptr) *evicted = std::move(out);
  return record;
}

CacheReport simulate_caches(const SelectionTrace& selections, const CacheRunConfig& cfg) {
  auto caches = make_caches(selections, cfg);
  std::vector<EvictionPolicy> policies(caches.size(), cfg.policy);
  if (cfg.policy.kind == EvictionKind::kBelady) {
    for (std::size_t s = 0; s < caches.size(); ++s) {
      policies[s].future = std::make_shared<FutureAccess>(selections.requests(s));
    }
  }
  CacheReport report;
  report.policy = to_string(cfg.policy.kind);
  report.window_mult = cfg.window_mult;
  report.seed = cfg.seed;
  report.records.reserve(selections.steps.size() * caches.size());
  for (std::size_t t = 0; t < selections.steps.size(); ++t) {
    for (std::size_t s = 0; s < caches.size(); ++s) {
      report.records.push_back(
          step_cache(caches[s], selections.steps[t][s], policies[s], static_cast<std::uint32_t>(t)));
    }
  }
  return report;
}

CacheReport run_trace(const DecodingTrace& trace, const SelectionConfig& selection,
                      const CacheRunConfig& cfg) {
  return simulate_caches(compute_selections(trace, selection), cfg);
}

}  // namespace kvdrive
