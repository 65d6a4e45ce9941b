#include "commands.hpp"

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "kvdrive/cache.hpp"
#include "kvdrive/index.hpp"
#include "kvdrive/pipeline.hpp"
#include "kvdrive/rng.hpp"
#include "kvdrive/tiering.hpp"

namespace kvdrive::cli {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// An empty mode falls back to the subcommand's default.
SelectionConfig selection_config(const CommonSettings& c, const SparsityConfig& sparsity,
                                 SelectionMode fallback) {
  SelectionConfig sc;
  sc.sparsity = sparsity;
  if (c.selection.empty()) {
    sc.mode = fallback;
  } else if (c.selection == "exact") {
    sc.mode = SelectionMode::kExact;
  } else if (c.selection == "index") {
    sc.mode = SelectionMode::kIndex;
  } else {
    throw ConfigError("unknown selection mode '" + c.selection + "' (exact | index)");
  }
  return sc;
}

void check_common(const CommonSettings& c) {
  check(!c.trace.empty() || !c.seeds.empty(), "the seed list is empty");
  check(c.budget >= 0.0 && c.budget <= 1.0, "budget must be a fraction in [0, 1]");
  check(c.selection.empty() || c.selection == "exact" || c.selection == "index", "unknown selection mode '" + c.selection + "'");
  if (!c.trace.empty()) {
    check(fs::exists(c.trace), "trace file not found: " + c.trace);
  } else {
    try {
      find_preset(c.preset);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
}

TierConfig load_tiers(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  check(static_cast<bool>(in), "tier config not found: " + path);
  std::stringstream text;
  text << in.rdbuf();
  try {
    return parse_tier_config(text.str());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// Default scratch location for a store file.
fs::path store_path(const std::string& configured, const CommonSettings& c, const std::string& tag,
                    std::uint64_t seed) {
  if (!configured.empty()) return configured;
  const std::string name = "kvdrive-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(seed) + ".kvdx";
  if (c.out != "-") return fs::path(c.out).parent_path() / name;
  return fs::temp_directory_path() / name;
}

// Critical sets of the observation-window queries: what a prefill pass can
// see before decoding starts. Used to plan co-access layouts.
std::vector<std::vector<TokenSet>> prefill_requests(const DecodingTrace& trace,
                                                    const std::vector<HierIndex>& indexes,
                                                    const SelectionConfig& sc) {
  std::vector<std::vector<TokenSet>> out(trace.stream_count());
  SelectOptions opt;
  opt.fanout = sc.fanout;
  for (std::size_t s = 0; s < trace.stream_count(); ++s) {
    for (std::size_t i = 0; i < trace.spec().obs_window; ++i) {
      out[s].push_back(select_critical(indexes[s], trace.keys(s), trace.obs_query(i, s), sc.sparsity, opt).critical);
    }
  }
  return out;
}

LayoutPlan make_layout(const std::string& layout, const DecodingTrace& trace,
                       const std::vector<HierIndex>& indexes, const SelectionConfig& sc) {
  const auto& spec = trace.spec();
  if (layout == "sequential") {
    return sequential_layout(spec.layers, spec.heads, static_cast<std::uint32_t>(spec.dim),
                             spec.context_length);
  }
  const auto co = collect_co_access(indexes, prefill_requests(trace, indexes, sc));
  return plan_layout(indexes, co, spec.layers, spec.heads);
}

// Stand-in attention over fetched entries: softmax(q.k) weighted value sum.
double attend(const std::vector<KVEntry>& entries, std::span<const float> query) {
  if (entries.empty()) return 0.0;
  std::vector<double> w(entries.size());
  double top = -1e300;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    w[i] = dot(entries[i].key, query);
    top = std::max(top, w[i]);
  }
  double z = 0.0;
  for (double& x : w) z += (x = std::exp(x - top));
  double out = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (float v : entries[i].value) out += w[i] / z * v;
  }
  return out;
}

bool matches_shadow(const DecodingTrace& trace, std::size_t stream, const TokenSet& wanted,
                    const std::vector<KVEntry>& got) {
  if (got.size() != wanted.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].token_index != wanted[i] || !(got[i] == trace.entry(stream, wanted[i]))) return false;
  }
  return true;
}

}  // namespace

void for_each_workload(const CommonSettings& c, const std::function<void(const Workload&)>& fn) {
  check_common(c);
  auto sparsity_for = [&](std::size_t n, SparsityConfig base) {
    if (c.budget > 0.0) {
      base.budget_k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(c.budget * static_cast<double>(n))));
    }
    base.validate(n);
    return base;
  };
  if (!c.trace.empty()) {
    Workload w;
    w.name = c.trace;
    w.trace = read_trace(c.trace);
    w.seed = w.trace.spec().seed;
    check(c.steps == 0 || c.steps == w.trace.steps(), "--steps cannot change a stored trace");
    SparsityConfig base;
    base.budget_k = std::max<std::size_t>(1, w.trace.context_length() / 16);
    w.sparsity = sparsity_for(w.trace.context_length(), base);
    fn(w);
    return;
  }
  const WorkloadPreset preset = find_preset(c.preset);
  for (std::uint64_t seed : c.seeds) {
    Workload w;
    w.name = preset.name;
    w.seed = seed;
    TraceSpec spec = preset.spec;
    spec.seed = seed;
    if (c.steps > 0) spec.steps = c.steps;
    w.trace = generate(spec);
    w.sparsity = sparsity_for(spec.context_length, preset.sparsity);
    fn(w);
  }
}

// ---------------------------------------------------------------------------

CsvSchema index_bench_schema() {
  return {{"seed", ColumnType::kInteger},          {"variant", ColumnType::kText},
          {"n_centroids", ColumnType::kInteger},   {"representatives", ColumnType::kInteger},
          {"recall", ColumnType::kReal},           {"select_us", ColumnType::kReal}};
}

CsvTable index_bench(const CommonSettings& c, const IndexBenchSettings& s) {
  check(!s.centroids.empty() && !s.variants.empty(), "centroid grid and variant list must be non-empty");
  for (const auto& v : s.variants) {
    check(v == "hier" || v == "minmax" || v == "flat-kmeans", "unknown index variant '" + v + "'");
  }
  check(s.chunk_size >= 1 && s.fanout > 0.0, "chunk_size must be >= 1 and fanout > 0");
  CsvTable table(index_bench_schema());
  for_each_workload(c, [&](const Workload& w) {
    const std::size_t n = w.trace.context_length();
    const std::size_t streams = w.trace.stream_count();
    for (const auto& variant : s.variants) {
      for (std::size_t n_c : s.centroids) {
        check(n_c >= 1, "centroid counts must be >= 1");
        double recall_sum = 0.0;
        double seconds = 0.0;
        std::size_t reps = 0;
        std::size_t queries = 0;
        for (std::size_t st = 0; st < streams; ++st) {
          const Matrix& keys = w.trace.keys(st);
          const std::uint64_t seed = hash_combine(w.seed, st);
          std::function<Selection(std::span<const float>)> select;
          HierIndex hier;
          MinMaxIndex minmax;
          FlatIndex flat;
          if (variant == "hier") {
            const std::size_t chunks = (n + s.chunk_size - 1) / s.chunk_size;
            hier = build_index(keys, s.chunk_size, std::min(n_c, chunks), seed);
            reps += hier.representative_count();
            SelectOptions opt;
            opt.fanout = s.fanout;
            select = [&](std::span<const float> q) { return select_critical(hier, keys, q, w.sparsity, opt); };
          } else if (variant == "minmax") {
            // Two bound vectors per chunk: size chunks so the counts line up.
            minmax = build_minmax_index(keys, std::max<std::size_t>(1, 2 * n / n_c));
            reps += minmax.representative_count();
            select = [&](std::span<const float> q) { return select_minmax(minmax, keys, q, w.sparsity); };
          } else {
            flat = build_flat_index(keys, std::min(n_c, n), seed);
            reps += flat.representative_count();
            select = [&](std::span<const float> q) { return select_flat(flat, keys, q, w.sparsity); };
          }
          for (std::size_t t = 0; t < w.trace.steps(); ++t) {
            const auto q = w.trace.query(t, st);
            const TokenSet exact = select_exact(keys, q, w.sparsity).critical;
            const auto t0 = Clock::now();
            const Selection sel = select(q);
            seconds += seconds_since(t0);
            recall_sum += recall(sel.critical, exact);
            ++queries;
          }
        }
        table.row() << w.seed << variant << n_c << reps / streams << recall_sum / static_cast<double>(queries)
                    << seconds / static_cast<double>(queries) * 1e6;
      }
    }
  });
  return table;
}

// ---------------------------------------------------------------------------

CsvSchema cache_bench_schema() {
  return {{"seed", ColumnType::kInteger},         {"policy", ColumnType::kText},
          {"window_mult", ColumnType::kReal},     {"capacity", ColumnType::kInteger},
          {"hit_rate", ColumnType::kReal},        {"mean_step_fetch_bytes", ColumnType::kReal},
          {"total_fetch_bytes", ColumnType::kInteger}};
}

CsvTable cache_bench(const CommonSettings& c, const CacheBenchSettings& s) {
  check(!s.windows.empty() && !s.policies.empty(), "window and policy lists must be non-empty");
  std::vector<EvictionKind> kinds;
  for (const auto& p : s.policies) {
    try {
      kinds.push_back(parse_eviction(p));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  for (double m : s.windows) check(m >= 0.0, "window multipliers must be >= 0");
  check(s.pool_factor >= 1.0, "pool_factor must be >= 1");
  check(s.decay > 0.0 && s.decay <= 1.0, "decay must be in (0, 1]");

  CsvTable table(cache_bench_schema());
  for_each_workload(c, [&](const Workload& w) {
    SelectionConfig sc = selection_config(c, w.sparsity, SelectionMode::kExact);
    sc.pool_factor = s.pool_factor;
    const SelectionTrace selections = compute_selections(w.trace, sc);
    for (EvictionKind kind : kinds) {
      for (double mult : s.windows) {
        CacheRunConfig rc;
        rc.policy.kind = kind;
        rc.policy.pool_size = sc.pool_size();
        rc.policy.decay = s.decay;
        rc.window_mult = mult;
        rc.seed = w.seed;
        const CacheReport report = simulate_caches(selections, rc);
        const auto capacity = static_cast<std::size_t>(std::llround(mult * static_cast<double>(w.sparsity.budget_k)));
        table.row() << w.seed << to_string(kind) << mult << capacity << report.hit_rate(s.from_step)
                    << report.mean_step_fetch_bytes(s.from_step) << report.total_fetch_bytes(s.from_step);
      }
    }
  });
  return table;
}

// ---------------------------------------------------------------------------

CsvSchema alloc_schema() {
  return {{"seed", ColumnType::kInteger},        {"uniform_window", ColumnType::kReal},
          {"method", ColumnType::kText},         {"budget_bytes", ColumnType::kReal},
          {"cost_bytes", ColumnType::kReal},     {"benefit_bytes", ColumnType::kReal},
          {"transfer_bytes", ColumnType::kInteger}, {"min_window", ColumnType::kInteger},
          {"max_window", ColumnType::kInteger}};
}

CsvTable alloc_bench(const CommonSettings& c, const AllocSettings& s) {
  check(!s.windows.empty() && !s.uniform_windows.empty(), "window lists must be non-empty");
  check(s.decay > 0.0 && s.decay <= 1.0, "decay must be in (0, 1]");
  for (double m : s.windows) check(m == 0.0 || m >= 1.0, "window multiples must be 0 or >= 1");
  CsvTable table(alloc_schema());
  for_each_workload(c, [&](const Workload& w) {
    const double k = static_cast<double>(w.sparsity.budget_k);
    auto tokens = [&](double mult) { return static_cast<std::size_t>(std::llround(mult * k)); };
    std::vector<std::size_t> candidates;
    for (double m : s.windows) candidates.push_back(tokens(m));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const SelectionConfig sc = selection_config(c, w.sparsity, SelectionMode::kExact);
    const SelectionTrace selections = compute_selections(w.trace, sc);
    EvictionPolicy policy;
    policy.pool_size = sc.pool_size();
    policy.decay = s.decay;
    const BenefitProfile profile = profile_benefit(selections, candidates, policy);
    double combos = 1.0;
    for (const auto& wins : profile.windows) combos *= static_cast<double>(wins.size());

    for (double uniform_mult : s.uniform_windows) {
      const auto it = std::find(candidates.begin(), candidates.end(), tokens(uniform_mult));
      check(it != candidates.end(), "every uniform window must be one of the candidate windows");
      const std::vector<std::size_t> uniform_choice(profile.pair_count(),
                                                    static_cast<std::size_t>(it - candidates.begin()));
      const Allocation uni = evaluate_allocation(profile, uniform_choice);
      const double budget = uni.total_cost;

      std::vector<std::pair<std::string, Allocation>> methods{{"uniform", uni},
                                                              {"greedy", solve_mckp_greedy(profile, budget)}};
      if (combos <= 1e6) methods.emplace_back("exact", solve_mckp_exact(profile, budget));

      for (const auto& [name, alloc] : methods) {
        CacheRunConfig rc;
        rc.policy = policy;
        rc.seed = w.seed;
        for (std::size_t p = 0; p < profile.pair_count(); ++p) {
          rc.capacities.push_back(profile.windows[p][alloc.choice[p]]);
        }
        const CacheReport report = simulate_caches(selections, rc);
        table.row() << w.seed << uniform_mult << name << budget << alloc.total_cost << alloc.total_benefit
                    << report.total_fetch_bytes()
                    << *std::min_element(rc.capacities.begin(), rc.capacities.end())
                    << *std::max_element(rc.capacities.begin(), rc.capacities.end());
      }
    }
  });
  return table;
}

// ---------------------------------------------------------------------------

CsvSchema tier_bench_schema() {
  return {{"seed", ColumnType::kInteger},           {"strategy", ColumnType::kText},
          {"layout", ColumnType::kText},            {"bytes_moved", ColumnType::kInteger},
          {"io_ops", ColumnType::kInteger},         {"predicted_time_s", ColumnType::kReal},
          {"wall_time_s", ColumnType::kReal},       {"pool_hits", ColumnType::kInteger},
          {"readback", ColumnType::kText}};
}

CsvTable tier_bench(const CommonSettings& c, const TierBenchSettings& s) {
  std::vector<FetchStrategy> strategies;
  for (const auto& name : s.strategies) {
    try {
      strategies.push_back(parse_strategy(name));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  check(!strategies.empty(), "strategy list must be non-empty");
  check(s.layout == "semantic" || s.layout == "sequential", "layout must be semantic or sequential");
  check(s.requests == "misses" || s.requests == "selection", "requests must be misses or selection");
  check(s.micro_batches >= 1, "micro_batches must be >= 1");
  check(s.consume_time_s >= 0.0, "consume_time_s must be >= 0");
  const TierConfig tiers = load_tiers(s.tiers);

  CsvTable table(tier_bench_schema());
  for_each_workload(c, [&](const Workload& w) {
    const DecodingTrace& trace = w.trace;
    const std::size_t streams = trace.stream_count();
    const SelectionConfig sc = selection_config(c, w.sparsity, SelectionMode::kIndex);
    const auto indexes = build_indexes(trace, sc);
    const SelectionTrace selections = compute_selections(trace, sc, &indexes);

    // requests[step][stream]
    std::vector<std::vector<TokenSet>> requests(selections.steps.size(), std::vector<TokenSet>(streams));
    CacheRunConfig rc;
    rc.policy.pool_size = sc.pool_size();
    auto caches = make_caches(selections, rc);
    for (std::size_t t = 0; t < selections.steps.size(); ++t) {
      for (std::size_t st = 0; st < streams; ++st) {
        const Selection& sel = selections.steps[t][st];
        if (s.requests == "selection") {
          requests[t][st] = sel.critical;
        } else {
          StepRecord rec;
          requests[t][st] = lookup_step(caches[st], sel, rec).misses;
          update_step(caches[st], sel, rc.policy);
        }
      }
    }

    const fs::path path = store_path(s.store, c, "tier", w.seed);
    write_store(path, trace, make_layout(s.layout, trace, indexes, sc), &indexes);
    const auto store = TieredStore::open(path);
    const auto groups = micro_batch_streams(streams, s.micro_batches);

    for (FetchStrategy strategy : strategies) {
      FetchOptions opt;
      opt.pool_bytes = s.pool_bytes;
      opt.pace_io = s.pace_io;
      if (strategy == FetchStrategy::kBalanced) {
        opt.resident_streams = profile_stalls(*store, requests, s.pool_bytes).recommended;
      }
      Fetcher fetcher(store, strategy, tiers, opt);
      FetchStats total;
      total.strategy = strategy;
      bool ok = true;
      double sink = 0.0;
      for (std::size_t t = 0; t < requests.size(); ++t) {
        std::vector<std::vector<TokenSet>> batches;
        for (const auto& g : groups) {
          std::vector<TokenSet> wanted(streams);
          for (std::size_t st : g) wanted[st] = requests[t][st];
          batches.push_back(std::move(wanted));
        }
        total.add(fetcher.fetch_step(batches, static_cast<std::uint32_t>(t),
                                     [&](std::size_t b, FetchResult&& r) {
                                       const auto until = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                                                             std::chrono::duration<double>(s.consume_time_s));
                                       for (std::size_t st : groups[b]) {
                                         ok = ok && matches_shadow(trace, st, requests[t][st], r.entries[st]);
                                         sink += attend(r.entries[st], trace.query(t, st));
                                       }
                                       std::this_thread::sleep_until(until);
                                     }));
      }
      table.row() << w.seed << to_string(strategy) << s.layout << total.bytes_moved << total.io_ops
                  << total.predicted_time_s << total.wall_time_s << total.pool_hits
                  << (ok && std::isfinite(sink) ? "ok" : "mismatch");
    }
    if (s.store.empty()) fs::remove(path);
  });
  return table;
}

// ---------------------------------------------------------------------------

CsvSchema pipeline_schema() {
  return {{"mix", ColumnType::kText},           {"micro_batches", ColumnType::kInteger},
          {"mode", ColumnType::kText},          {"makespan_s", ColumnType::kReal},
          {"stall_gpu_s", ColumnType::kReal},   {"stall_cpu_s", ColumnType::kReal},
          {"stall_io_s", ColumnType::kReal},    {"speedup", ColumnType::kReal}};
}

namespace {

StageCosts mix_costs(const std::string& mix, std::size_t m, double u) {
  if (mix == "balanced") return StageCosts::uniform(m, u, u, u, 0.0, 0.0);
  if (mix == "fetch-heavy") return StageCosts::uniform(m, u, u, 10 * u, u, u);
  if (mix == "select-heavy") return StageCosts::uniform(m, 4 * u, u, u, u, u);
  if (mix == "compute-heavy") return StageCosts::uniform(m, u, u, u, 10 * u, u);
  throw ConfigError("unknown cost mix '" + mix + "'");
}

}  // namespace

PipelineOutput pipeline_bench(const CommonSettings& c, const PipelineSettings& s) {
  check(s.unit_s > 0.0, "unit_s must be > 0");
  check(!s.micro_batches.empty() && !s.mixes.empty(), "micro-batch and mix lists must be non-empty");
  for (std::size_t m : s.micro_batches) check(m >= 1, "micro-batch counts must be >= 1");
  PipelineOutput out{CsvTable(pipeline_schema()), nullptr, CsvTable(schedule_schema())};

  for (const auto& mix : s.mixes) {
    for (std::size_t m : s.micro_batches) {
      const StageCosts costs = mix_costs(mix, m, s.unit_s);
      const PipelineSchedule seq = simulate_sequential(costs);
      const PipelineSchedule sfc = simulate_sfc(costs);
      for (const auto* sched : {&seq, &sfc}) {
        out.table.row() << mix << m << (sched == &seq ? "sequential" : "sfc") << sched->makespan_s
                        << sched->stall(Resource::kGpu) << sched->stall(Resource::kCpu)
                        << sched->stall(Resource::kIo) << seq.makespan_s / sched->makespan_s;
      }
    }
  }
  if (!s.gantt_out.empty()) append_csv(out.gantt, simulate_sfc(mix_costs(s.gantt_mix, s.gantt_m, s.unit_s)));

  if (s.tune) {
    check(!s.tune_centroids.empty() && !s.tune_cache_bytes.empty() && !s.tune_micro_batches.empty(),
          "tuning grids must be non-empty");
    CommonSettings first = c;
    if (first.trace.empty()) first.seeds.resize(std::min<std::size_t>(1, first.seeds.size()));
    for_each_workload(first, [&](const Workload& w) {
      SelectionConfig sc = selection_config(c, w.sparsity, SelectionMode::kIndex);
      sc.mode = SelectionMode::kIndex;  // the centroid grid only matters for indexed selection
      TuneGrid grid{s.tune_centroids, s.tune_cache_bytes, s.tune_micro_batches, s.tune_tolerance_s};
      const TuneResult r =
          tune(grid, prerun_cost_model(w.trace, sc, EvictionPolicy{}, TierConfig{}, s.compute_time_s, s.prerun_steps));
      nlohmann::json j;
      j["seed"] = w.seed;
      j["n_centroids"] = r.n_centroids;
      j["cache_bytes"] = r.cache_bytes;
      j["micro_batches"] = r.micro_batches;
      j["throughput_steps_per_s"] = r.throughput;
      auto caches = s.tune_cache_bytes;
      std::sort(caches.begin(), caches.end());
      caches.erase(std::unique(caches.begin(), caches.end()), caches.end());
      for (std::size_t i = 0; i < caches.size(); ++i) {
        j["equilibrium"].push_back({{"cache_bytes", caches[i]}, {"gap_s", r.equilibrium_gap_s[i]}});
      }
      for (const auto& e : r.evaluated) {
        j["evaluated"].push_back({{"n_centroids", e.n_centroids},
                                  {"micro_batches", e.micro_batches},
                                  {"throughput_steps_per_s", e.throughput}});
      }
      out.tune = j;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

CsvSchema e2e_schema() {
  return {{"seed", ColumnType::kInteger},         {"steps", ColumnType::kInteger},
          {"hit_rate", ColumnType::kReal},        {"mean_step_fetch_bytes", ColumnType::kReal},
          {"bytes_moved", ColumnType::kInteger},  {"sequential_wall_s", ColumnType::kReal},
          {"pipelined_wall_s", ColumnType::kReal}, {"speedup", ColumnType::kReal},
          {"steps_per_s", ColumnType::kReal},     {"fast_tokens", ColumnType::kInteger},
          {"ram_tokens", ColumnType::kInteger},   {"equivalent", ColumnType::kText}};
}

E2eOutput e2e(const CommonSettings& c, const E2eSettings& s) {
  check(s.micro_batches >= 1, "micro_batches must be >= 1");
  check(s.window_mult >= 0.0, "window_mult must be >= 0");
  check(s.layout == "semantic" || s.layout == "sequential", "layout must be semantic or sequential");
  check(s.compute_time_s >= 0.0, "compute_time_s must be >= 0");
  check(s.fast_fraction >= 0.0 && s.ram_fraction >= 0.0, "tier fractions must be >= 0");
  ExecutorConfig base;
  try {
    base.policy.kind = parse_eviction(s.policy);
    base.strategy = parse_strategy(s.strategy);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  check(base.policy.kind != EvictionKind::kBelady, "the executor needs an online policy (LA or LRU)");
  const TierConfig tiers = load_tiers(s.tiers);

  E2eOutput out{CsvTable(e2e_schema()), nlohmann::json::object()};
  out.report["preset"] = c.trace.empty() ? c.preset : c.trace;
  out.report["settings"] = s;
  for_each_workload(c, [&](const Workload& w) {
    const DecodingTrace& trace = w.trace;
    ExecutorConfig cfg = base;
    cfg.selection = selection_config(c, w.sparsity, SelectionMode::kIndex);
    cfg.policy.pool_size = cfg.selection.pool_size();
    cfg.window_mult = s.window_mult;
    cfg.micro_batches = s.micro_batches;
    cfg.tiers = tiers;
    if (s.tiers.empty()) {
      const double prefix = static_cast<double>(entry_bytes(trace.dim()) * trace.stream_count() * trace.context_length());
      cfg.tiers.fast.capacity_bytes = static_cast<std::uint64_t>(s.fast_fraction * prefix);
      cfg.tiers.ram.capacity_bytes = static_cast<std::uint64_t>(s.ram_fraction * prefix);
    }
    cfg.compute_time_s = s.compute_time_s;
    cfg.fetch.pace_io = s.pace_io;
    cfg.seed = w.seed;

    const auto t_index = Clock::now();
    const auto indexes = build_indexes(trace, cfg.selection);
    const double index_s = seconds_since(t_index);

    Placement placement;
    if (s.warmup) {
      const ImportanceProfile importance = compute_importance(trace);
      placement = warmup_placement(importance.global, cfg.tiers,
                                   entry_bytes(trace.dim()) * trace.stream_count(),
                                   w.sparsity.pinned_tokens(trace.context_length()));
      cfg.fetch.placement = &placement;
    }

    const fs::path path = store_path(s.store, c, "e2e", w.seed);
    write_store(path, trace, make_layout(s.layout, trace, indexes, cfg.selection), &indexes);
    const auto store = TieredStore::open(path);

    const ExecutionReport seq = run_sequential(trace, store, cfg);
    const ExecutionReport pipe = run_executor(trace, store, cfg);
    const bool equivalent = seq.cache == pipe.cache && seq.decision_digest == pipe.decision_digest &&
                            seq.fetched_checksum == pipe.fetched_checksum;
    if (s.store.empty()) fs::remove(path);

    out.summary.row() << w.seed << pipe.steps << pipe.cache.hit_rate(1) << pipe.cache.mean_step_fetch_bytes(1)
                      << pipe.fetch.bytes_moved << seq.wall_time_s << pipe.wall_time_s
                      << seq.wall_time_s / pipe.wall_time_s << pipe.steps_per_s()
                      << placement.count(Tier::kFast) << placement.count(Tier::kRam)
                      << (equivalent ? "true" : "false");

    nlohmann::json run;
    run["seed"] = w.seed;
    run["index_build_s"] = index_s;
    run["decision_digest"] = pipe.decision_digest;
    run["equivalent"] = equivalent;
    for (const auto* r : {&seq, &pipe}) {
      nlohmann::json stages;
      for (int st = 0; st < 5; ++st) stages[to_string(static_cast<Stage>(st))] = r->stage_time_s[st];
      run[r == &seq ? "sequential" : "pipelined"] = {{"wall_time_s", r->wall_time_s},
                                                     {"stage_busy_s", stages},
                                                     {"bytes_moved", r->fetch.bytes_moved},
                                                     {"io_ops", r->fetch.io_ops},
                                                     {"upper_tier_hits", r->fetch.upper_tier_hits}};
    }
    run["placement"] = {{"fast", placement.count(Tier::kFast)},
                        {"ram", placement.count(Tier::kRam)},
                        {"disk_only", placement.count(Tier::kDisk)}};
    out.report["runs"].push_back(run);
  });
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> gen_trace(const CommonSettings& c) {
  check(c.trace.empty(), "gen-trace writes traces; --trace is an input flag");
  check(c.out != "-", "gen-trace needs an --out file path");
  std::vector<std::string> written;
  const fs::path out(c.out);
  for_each_workload(c, [&](const Workload& w) {
    fs::path path = out;
    if (c.seeds.size() > 1) {
      path = out.parent_path() / (out.stem().string() + ".s" + std::to_string(w.seed) + out.extension().string());
    }
    write_trace(path, w.trace);
    written.push_back(path.string());
  });
  return written;
}

}  // namespace kvdrive::cli
