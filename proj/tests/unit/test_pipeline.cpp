#include <doctest.h>

#include <map>
#include <tuple>

#include "helpers.hpp"
#include "kvdrive/pipeline.hpp"

using namespace kvdrive;

namespace {

StageCosts random_costs(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> mb(1, 12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t m = mb(rng);
  StageCosts c;
  const double zero_chance = 0.15;
  auto draw = [&] { return u(rng) < zero_chance ? 0.0 : u(rng) * (u(rng) < 0.2 ? 10.0 : 1.0); };
  for (std::size_t i = 0; i < m; ++i) {
    c.select.push_back(draw());
    c.hitmiss.push_back(draw());
    c.fetch.push_back(draw());
  }
  c.compute = draw();
  c.meta = draw();
  return c;
}

struct ExecFixture {
  DecodingTrace trace;
  kvtest::TempPath file;
  std::shared_ptr<TieredStore> store;

  explicit ExecFixture(std::uint64_t seed)
      : trace(generate(kvtest::small_spec(seed, 1024, 6))), file("exec-" + std::to_string(seed) + ".kvdx") {
    const auto& s = trace.spec();
    write_store(file.path(), trace, sequential_layout(s.layers, s.heads, s.dim, s.context_length));
    store = TieredStore::open(file.path());
  }

  ExecutorConfig config(std::size_t mb) const {
    ExecutorConfig cfg;
    cfg.selection.mode = SelectionMode::kIndex;
    cfg.selection.sparsity = kvtest::small_sparsity(1024);
    cfg.policy.pool_size = cfg.selection.pool_size();
    cfg.micro_batches = mb;
    cfg.fetch.pace_io = false;
    cfg.compute_time_s = 0.0005;
    cfg.seed = 1;
    return cfg;
  }
};

}  // namespace

TEST_CASE("sequential makespan is the plain sum") {
  const StageCosts one = StageCosts::uniform(1, 1, 1, 1, 1, 1);
  CHECK(simulate_sequential(one).makespan_s == 5.0);

  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    StageCosts c = random_costs(rng);
    double total = c.compute + c.meta;
    for (std::size_t i = 0; i < c.micro_batches(); ++i) total += c.select[i] + c.hitmiss[i] + c.fetch[i];
    const double base = simulate_sequential(c).makespan_s;
    CHECK(base == doctest::Approx(total));
    double fetch_total = 0.0;
    for (double& f : c.fetch) {
      fetch_total += f;
      f = 0.0;
    }
    CHECK(simulate_sequential(c).makespan_s == doctest::Approx(base - fetch_total));
  }
}

TEST_CASE("sequential timeline for three asymmetric micro-batches") {
  StageCosts c;
  c.select = {1, 2, 3};
  c.hitmiss = {0.5, 0.25, 1};
  c.fetch = {2, 1, 4};
  c.compute = 3;
  c.meta = 0.5;
  const PipelineSchedule s = simulate_sequential(c);
  // Hand-built: stages back to back in micro-batch order.
  const std::vector<std::tuple<Stage, int, double, double>> want{
      {Stage::kSelect, 0, 0, 1},      {Stage::kHitMiss, 0, 1, 1.5},      {Stage::kFetch, 0, 1.5, 3.5},
      {Stage::kSelect, 1, 3.5, 5.5},  {Stage::kHitMiss, 1, 5.5, 5.75},   {Stage::kFetch, 1, 5.75, 6.75},
      {Stage::kSelect, 2, 6.75, 9.75}, {Stage::kHitMiss, 2, 9.75, 10.75}, {Stage::kFetch, 2, 10.75, 14.75},
      {Stage::kCompute, -1, 14.75, 17.75}, {Stage::kMeta, -1, 17.75, 18.25}};
  REQUIRE(s.events.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(s.events[i].stage == std::get<0>(want[i]));
    CHECK(s.events[i].micro_batch == std::get<1>(want[i]));
    CHECK(s.events[i].start_s == doctest::Approx(std::get<2>(want[i])));
    CHECK(s.events[i].end_s == doctest::Approx(std::get<3>(want[i])));
  }
  CHECK(s.makespan_s == doctest::Approx(18.25));
  CHECK(check_schedule(s, c).empty());
}

TEST_CASE("sfc timeline for three asymmetric micro-batches") {
  StageCosts c;
  c.select = {1, 2, 3};
  c.hitmiss = {0.5, 0.25, 1};
  c.fetch = {2, 1, 4};
  c.compute = 3;
  c.meta = 0.5;
  const PipelineSchedule s = simulate_sfc(c);
  // GPU: select 0 [0,1], 1 [1,3], 2 [3,6]. CPU: hitmiss 0 [1,1.5], 1 [3,3.25],
  // 2 [6,7]. IO: fetch 0 [1.5,3.5], 1 [3.5,4.5], 2 [7,11]. Compute [11,14],
  // meta [11,11.5].
  CHECK(s.makespan_s == doctest::Approx(14.0));
  CHECK(s.stall(Resource::kIo) == doctest::Approx(2.5));
  CHECK(check_schedule(s, c).empty());
}

TEST_CASE("balanced stages follow the pipeline formula") {
  for (std::size_t m : {1ul, 2ul, 3ul, 4ul, 8ul, 32ul}) {
    const StageCosts c = StageCosts::uniform(m, 1, 1, 1, 0, 0);
    const double seq = simulate_sequential(c).makespan_s;
    const double sfc = simulate_sfc(c).makespan_s;
    CHECK(seq == doctest::Approx(3.0 * m));
    CHECK(sfc == doctest::Approx(m + 2.0));
    CHECK(seq / sfc == doctest::Approx(3.0 * m / (m + 2.0)));
  }
  const StageCosts c = StageCosts::uniform(32, 1, 1, 1, 0, 0);
  const double speedup = simulate_sequential(c).makespan_s / simulate_sfc(c).makespan_s;
  CHECK(speedup >= 2.7);
  CHECK(speedup <= 3.0);
}

TEST_CASE("one micro-batch cannot overlap") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    StageCosts c = random_costs(rng);
    c.select.resize(1);
    c.hitmiss.resize(1);
    c.fetch.resize(1);
    CHECK(simulate_sfc(c).makespan_s == simulate_sequential(c).makespan_s);
  }
}

TEST_CASE("fetch-dominated costs keep the disk busy") {
  for (std::size_t m : {4ul, 16ul, 64ul}) {
    const double u = 1.0;
    const StageCosts c = StageCosts::uniform(m, u, u, 10 * u, u, u);
    const PipelineSchedule s = simulate_sfc(c);
    const double io_total = 10.0 * u * static_cast<double>(m);
    CHECK(s.makespan_s >= io_total);
    // Only the pipeline fill (select + hitmiss of micro-batch 0) and the tail
    // (compute, with meta overlapped) add to the disk time.
    CHECK(s.makespan_s <= io_total + 2 * u + u + 1e-9);
    CHECK(s.stall(Resource::kIo) == doctest::Approx(0.0));
  }
}

TEST_CASE("sfc never loses to sequential and schedules are valid") {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 1000; ++trial) {
    const StageCosts c = random_costs(rng);
    const PipelineSchedule seq = simulate_sequential(c);
    const PipelineSchedule sfc = simulate_sfc(c);
    CHECK(sfc.makespan_s <= seq.makespan_s + 1e-9);
    CHECK(check_schedule(seq, c).empty());
    CHECK(check_schedule(sfc, c).empty());
    // At most three micro-batches between select and the fetch it waits on.
    for (const auto& e : sfc.events) {
      if (e.stage != Stage::kSelect || e.micro_batch < static_cast<int>(kOverlapDepth)) continue;
      for (const auto& f : sfc.events) {
        if (f.stage == Stage::kFetch && f.micro_batch == e.micro_batch - static_cast<int>(kOverlapDepth)) {
          CHECK(e.start_s + 1e-9 >= f.end_s);
        }
      }
    }
  }
}

TEST_CASE("check_schedule reports violations") {
  const StageCosts c = StageCosts::uniform(2, 1, 1, 1, 1, 1);
  PipelineSchedule s = simulate_sfc(c);
  PipelineSchedule overlap = s;
  for (auto& e : overlap.events) {
    if (e.stage == Stage::kSelect && e.micro_batch == 1) {
      e.start_s -= 0.5;
      e.end_s -= 0.5;
    }
  }
  CHECK_FALSE(check_schedule(overlap, c).empty());
  PipelineSchedule early = s;
  for (auto& e : early.events) {
    if (e.stage == Stage::kCompute) {
      e.start_s = 0.0;
      e.end_s = 1.0;
    }
  }
  CHECK_FALSE(check_schedule(early, c).empty());
  PipelineSchedule missing = s;
  missing.events.pop_back();
  CHECK_FALSE(check_schedule(missing, c).empty());

  CsvTable t(schedule_schema());
  append_csv(t, s);
  CHECK(t.size() == s.events.size());
  CHECK(validate_csv(t.str(0), schedule_schema()).ok);
  CHECK_THROWS_AS(simulate_sfc(StageCosts{}), Error);
  StageCosts negative = c;
  negative.fetch[0] = -1;
  CHECK_THROWS_AS(simulate_sequential(negative), Error);
}

TEST_CASE("tuner returns the single grid point") {
  TuneGrid g{{64}, {1024}, {2}, 0.0};
  const TuneResult r = tune(g, [](std::size_t, std::uint64_t, std::size_t m) {
    return StageCosts::uniform(m, 1, 1, 1, 1, 1);
  });
  CHECK(r.n_centroids == 64);
  CHECK(r.cache_bytes == 1024);
  CHECK(r.micro_batches == 2);
  CHECK_THROWS_AS(tune(TuneGrid{{}, {1}, {1}, 0.0}, [](auto, auto, auto) { return StageCosts{}; }), Error);
}

TEST_CASE("tuner finds the linear equilibrium") {
  // hitmiss grows as a*c, fetch shrinks as b - e*c; crossing at c* = b / (a + e).
  const double a = 2e-9;
  const double b = 0.05;
  const double e = 3e-9;
  const double crossing = b / (a + e);  // 1e7 bytes
  TuneGrid g;
  g.n_centroids = {16};
  g.micro_batches = {1};
  const std::uint64_t step = 1500000;
  for (std::uint64_t c = 0; c <= 20000000; c += step) g.cache_bytes.push_back(c);
  const TuneResult r = tune(g, [&](std::size_t, std::uint64_t c, std::size_t m) {
    const double x = static_cast<double>(c);
    return StageCosts::uniform(m, 0.001, a * x, std::max(0.0, b - e * x), 0.001, 0.0);
  });
  CHECK(std::fabs(static_cast<double>(r.cache_bytes) - crossing) <= static_cast<double>(step));
  CHECK(r.equilibrium_gap_s.size() == g.cache_bytes.size());
}

TEST_CASE("tuner pick is the argmax at the chosen cache") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::map<std::tuple<std::size_t, std::uint64_t, std::size_t>, StageCosts> table;
    TuneGrid g{{16, 64, 256}, {0, 100, 200}, {1, 2, 4}, 0.0};
    for (auto n : g.n_centroids) {
      for (auto c : g.cache_bytes) {
        for (auto m : g.micro_batches) {
          table[{n, c, m}] = StageCosts::uniform(m, u(rng), u(rng), u(rng), u(rng), u(rng));
        }
      }
    }
    const auto model = [&](std::size_t n, std::uint64_t c, std::size_t m) { return table.at({n, c, m}); };
    const TuneResult r = tune(g, model);
    CHECK(r.evaluated.size() == 9);
    for (auto n : g.n_centroids) {
      for (auto m : g.micro_batches) {
        CHECK(r.throughput >= 1.0 / simulate_sfc(model(n, r.cache_bytes, m)).makespan_s - 1e-12);
      }
    }
  }
}

TEST_CASE("tuner prefers the smallest values on ties") {
  TuneGrid g{{256, 16}, {300, 100}, {4, 2}, 0.0};
  const TuneResult r = tune(g, [](std::size_t, std::uint64_t, std::size_t m) {
    StageCosts c = StageCosts::uniform(m, 0, 0, 0, 1, 0);
    return c;
  });
  CHECK(r.n_centroids == 16);
  CHECK(r.cache_bytes == 100);
  CHECK(r.micro_batches == 2);
}

TEST_CASE("pre-run cost model measures the trace") {
  const DecodingTrace trace = generate(kvtest::small_spec(2, 1024, 4));
  SelectionConfig sc;
  sc.mode = SelectionMode::kIndex;
  sc.sparsity = kvtest::small_sparsity(1024);
  EvictionPolicy p;
  p.pool_size = sc.pool_size();
  const CostModel model = prerun_cost_model(trace, sc, p, TierConfig{}, 0.002, 2);
  const StageCosts none = model(64, 0, 2);
  const StageCosts big = model(64, 1 << 20, 2);
  CHECK(none.micro_batches() == 2);
  CHECK(none.compute == 0.002);
  double fetch_none = 0.0;
  double fetch_big = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    fetch_none += none.fetch[i];
    fetch_big += big.fetch[i];
  }
  CHECK(fetch_big < fetch_none);
  const TuneResult r = tune(TuneGrid{{16, 64}, {0, 1 << 20}, {1, 2}, 0.0}, model);
  CHECK((r.n_centroids == 16 || r.n_centroids == 64));
  EvictionPolicy belady;
  belady.kind = EvictionKind::kBelady;
  CHECK_THROWS_AS(prerun_cost_model(trace, sc, belady, TierConfig{}, 0.0, 2), Error);
}

TEST_CASE("roofline placement") {
  const RooflineModel m;
  CHECK(roofline_placement(1.0, m).site == ComputeSite::kComputeFar);
  CHECK(std::isinf(roofline_placement(1.0, m).intensity));

  RooflineModel starved = m;
  starved.flops_per_token = 1.0;
  starved.bytes_per_token_miss = 1e6;
  CHECK(roofline_placement(0.0, starved).site == ComputeSite::kComputeNear);

  // Recomputed threshold: intensity at h = 0.8 against cpu_flops / link_bw.
  const RooflineDecision d = roofline_placement(0.8, m);
  const double intensity = m.flops_per_token / (0.2 * m.bytes_per_token_miss);
  CHECK(d.intensity == doctest::Approx(intensity));
  CHECK(d.intensity > m.threshold_intensity());
  CHECK(d.site == ComputeSite::kComputeFar);
  CHECK(std::string(to_string(d.site)) == "ComputeFar");

  CHECK_THROWS_AS(roofline_placement(1.5, m), Error);
  RooflineModel bad = m;
  bad.link_bw = 0.0;
  CHECK_THROWS_AS(roofline_placement(0.5, bad), Error);
}

TEST_CASE("micro-batch stream groups") {
  const auto g = micro_batch_streams(4, 3);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == std::vector<std::size_t>{0});
  CHECK(g[1] == std::vector<std::size_t>{1});
  CHECK(g[2] == std::vector<std::size_t>{2, 3});
  CHECK(micro_batch_streams(4, 9).size() == 4);
  CHECK(micro_batch_streams(4, 1)[0].size() == 4);
  CHECK_THROWS_AS(micro_batch_streams(4, 0), Error);
}

TEST_CASE("executor decisions equal the sequential reference") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ExecFixture fx(seed);
    for (std::size_t mb : {1ul, 2ul, 4ul}) {
      for (FetchStrategy strategy : {FetchStrategy::kSparseBlocks, FetchStrategy::kHierarchical}) {
        ExecutorConfig cfg = fx.config(mb);
        cfg.strategy = strategy;
        const ExecutionReport seq = run_sequential(fx.trace, fx.store, cfg);
        const ExecutionReport par = run_executor(fx.trace, fx.store, cfg);
        CHECK(seq.cache == par.cache);
        CHECK(seq.decision_digest == par.decision_digest);
        CHECK(seq.fetched_checksum == par.fetched_checksum);
        CHECK(seq.steps == 6);
        CHECK(par.steps_per_s() > 0.0);
      }
    }
  }
}

TEST_CASE("executor cache report matches the trace simulator") {
  ExecFixture fx(4);
  ExecutorConfig cfg = fx.config(2);
  const ExecutionReport seq = run_sequential(fx.trace, fx.store, cfg);
  CacheRunConfig rc;
  rc.policy = cfg.policy;
  rc.window_mult = cfg.window_mult;
  rc.seed = cfg.seed;
  const CacheReport sim = run_trace(fx.trace, cfg.selection, rc);
  CHECK(seq.cache.records == sim.records);
  CHECK(seq.fetch.bytes_moved > 0);
}

TEST_CASE("executor rejects Belady and mismatched stores") {
  ExecFixture fx(5);
  ExecutorConfig cfg = fx.config(2);
  cfg.policy.kind = EvictionKind::kBelady;
  CHECK_THROWS_AS(run_executor(fx.trace, fx.store, cfg), Error);
  const DecodingTrace other = generate(kvtest::small_spec(5, 512, 2));
  CHECK_THROWS_AS(run_sequential(other, fx.store, fx.config(2)), Error);
}

TEST_CASE("watchdog turns a stall into a timeout") {
  ExecFixture fx(6);
  ExecutorConfig cfg = fx.config(2);
  cfg.compute_time_s = 0.4;
  cfg.watchdog_s = 0.05;
  cfg.max_steps = 2;
  try {
    run_executor(fx.trace, fx.store, cfg);
    FAIL("expected a timeout");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTimeout);
    CHECK(std::string(e.what()).find("computer at step") != std::string::npos);
  }
}
