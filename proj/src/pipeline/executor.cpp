#include <atomic>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>

#include "kvdrive/bounded_queue.hpp"
#include "kvdrive/pipeline.hpp"
#include "kvdrive/rng.hpp"

namespace kvdrive {

std::vector<std::vector<std::size_t>> micro_batch_streams(std::size_t streams, std::size_t m) {
  require(m >= 1, ErrorCode::kInvalidArgument, "need at least one micro-batch");
  m = std::min(m, streams);
  std::vector<std::vector<std::size_t>> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t begin = i * streams / m;
    const std::size_t end = (i + 1) * streams / m;
    for (std::size_t s = begin; s < end; ++s) out[i].push_back(s);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::uint64_t digest_tokens(std::uint64_t h, const TokenSet& tokens) {
  h = hash_combine(h, tokens.size());
  for (TokenIndex t : tokens) h = hash_combine(h, t);
  return h;
}

void emulate_compute(double seconds, ComputeMode mode) {
  if (seconds <= 0.0) return;
  const auto until = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                        std::chrono::duration<double>(seconds));
  if (mode == ComputeMode::kSleep) {
    std::this_thread::sleep_until(until);
    return;
  }
  volatile double sink = 0.0;
  while (Clock::now() < until) {
    for (int i = 0; i < 1000; ++i) sink = sink + 1e-9 * i;
  }
}

// Stage functions shared by both executors, so their decisions coincide.
class StepEngine {
 public:
  StepEngine(const DecodingTrace& trace, std::shared_ptr<const TieredStore> store,
             const ExecutorConfig& cfg)
      : trace_(trace), cfg_(cfg), streams_(trace.stream_count()) {
    require(store != nullptr && store->stream_count() == streams_ &&
                store->plan().context_length == trace.context_length() && store->dim() == trace.dim(),
            ErrorCode::kInvalidArgument, "store does not match the trace");
    if (cfg.selection.mode == SelectionMode::kIndex) {
      indexes_ = store->indexes().size() == streams_ ? store->indexes()
                                                     : build_indexes(trace, cfg.selection);
    }
    selections_.layers = trace.spec().layers;
    selections_.heads = trace.spec().heads;
    selections_.dim = trace.dim();
    selections_.context_length = trace.context_length();
    selections_.sparsity = cfg.selection.sparsity;
    CacheRunConfig run;
    run.policy = cfg.policy;
    run.window_mult = cfg.window_mult;
    run.seed = cfg.seed;
    caches_ = make_caches(selections_, run);
    groups_ = micro_batch_streams(streams_, cfg.micro_batches);
    fetcher_ = std::make_unique<Fetcher>(std::move(store), cfg.strategy, cfg.tiers, cfg.fetch);
    steps_ = cfg.max_steps == 0 ? static_cast<std::uint32_t>(trace.steps())
                                : std::min<std::uint32_t>(cfg.max_steps,
                                                          static_cast<std::uint32_t>(trace.steps()));
    require(cfg.policy.kind != EvictionKind::kBelady, ErrorCode::kInvalidArgument,
            "the executors run online policies only");
    report_.cache.policy = to_string(cfg.policy.kind);
    report_.cache.window_mult = cfg.window_mult;
    report_.cache.seed = cfg.seed;
    report_.steps = steps_;
    report_.fetch.strategy = cfg.strategy;
    step_selections_.resize(streams_);
    step_records_.resize(streams_);
  }

  std::uint32_t steps() const { return steps_; }
  std::size_t batches() const { return groups_.size(); }
  ExecutionReport& report() { return report_; }

  std::vector<Selection> select(std::uint32_t step, std::size_t mb) const {
    std::vector<Selection> out;
    for (std::size_t s : groups_[mb]) out.push_back(select_for(trace_, indexes_, cfg_.selection, step, s));
    return out;
  }

  // Lookup for one micro-batch; returns the misses to fetch (all streams listed).
  std::vector<TokenSet> hitmiss(std::uint32_t step, std::size_t mb, std::vector<Selection> sel) {
    std::vector<TokenSet> wanted(streams_);
    for (std::size_t i = 0; i < groups_[mb].size(); ++i) {
      const std::size_t s = groups_[mb][i];
      StepRecord& rec = step_records_[s];
      rec = StepRecord{};
      rec.step = step;
      LookupResult r = lookup_step(caches_[s], sel[i], rec);
      digest_ = digest_tokens(digest_, sel[i].critical);
      digest_ = digest_tokens(digest_, r.misses);
      wanted[s] = std::move(r.misses);
      step_selections_[s] = std::move(sel[i]);
    }
    return wanted;
  }

  double fetch(std::uint32_t step, const std::vector<TokenSet>& wanted) {
    const FetchResult r = fetcher_->fetch(wanted, step);
    report_.fetch.add(r.stats);
    double sum = 0.0;
    for (const auto& stream : r.entries) {
      for (const auto& e : stream) {
        for (float v : e.key) sum += v;
        for (float v : e.value) sum += v;
      }
    }
    return sum;
  }

  void compute() const { emulate_compute(cfg_.compute_time_s, cfg_.compute_mode); }

  void meta() {
    for (std::size_t s = 0; s < streams_; ++s) {
      const TokenSet evicted = update_step(caches_[s], step_selections_[s], cfg_.policy);
      digest_ = digest_tokens(digest_, evicted);
      report_.cache.records.push_back(step_records_[s]);
    }
  }

  void finish() { report_.decision_digest = digest_; }

 private:
  const DecodingTrace& trace_;
  ExecutorConfig cfg_;
  std::size_t streams_;
  std::vector<HierIndex> indexes_;
  SelectionTrace selections_;  // shape only
  std::vector<WindowCache> caches_;
  std::vector<std::vector<std::size_t>> groups_;
  std::unique_ptr<Fetcher> fetcher_;
  std::uint32_t steps_ = 0;
  std::vector<Selection> step_selections_;
  std::vector<StepRecord> step_records_;
  std::uint64_t digest_ = 0x6b76647269766500ull;
  ExecutionReport report_;
};

void add_time(ExecutionReport& r, Stage s, double t) { r.stage_time_s[static_cast<int>(s)] += t; }

// Monotone step counter with blocking waits that give up on abort.
class StepSignal {
 public:
  void post(std::int64_t step) {
    std::lock_guard lock(mu_);
    value_ = step;
    cv_.notify_all();
  }
  bool wait_for(std::int64_t step, const std::atomic<bool>& abort) {
    std::unique_lock lock(mu_);
    while (value_ < step) {
      if (abort) return false;
      cv_.wait_for(lock, std::chrono::milliseconds(50));
    }
    return true;
  }
  void wake() { cv_.notify_all(); }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::int64_t value_ = -1;
};

}  // namespace

ExecutionReport run_sequential(const DecodingTrace& trace, std::shared_ptr<const TieredStore> store,
                               const ExecutorConfig& cfg) {
  StepEngine engine(trace, std::move(store), cfg);
  ExecutionReport& report = engine.report();
  const auto start = Clock::now();
  for (std::uint32_t t = 0; t < engine.steps(); ++t) {
    for (std::size_t mb = 0; mb < engine.batches(); ++mb) {
      auto t0 = Clock::now();
      auto sel = engine.select(t, mb);
      add_time(report, Stage::kSelect, seconds_since(t0));
      t0 = Clock::now();
      const auto wanted = engine.hitmiss(t, mb, std::move(sel));
      add_time(report, Stage::kHitMiss, seconds_since(t0));
      t0 = Clock::now();
      report.fetched_checksum += engine.fetch(t, wanted);
      add_time(report, Stage::kFetch, seconds_since(t0));
    }
    auto t0 = Clock::now();
    engine.compute();
    add_time(report, Stage::kCompute, seconds_since(t0));
    t0 = Clock::now();
    engine.meta();
    add_time(report, Stage::kMeta, seconds_since(t0));
  }
  report.wall_time_s = seconds_since(start);
  engine.finish();
  return report;
}

ExecutionReport run_executor(const DecodingTrace& trace, std::shared_ptr<const TieredStore> store,
                             const ExecutorConfig& cfg) {
  StepEngine engine(trace, std::move(store), cfg);
  ExecutionReport& report = engine.report();

  struct Selected {
    std::uint32_t step;
    std::size_t mb;
    std::vector<Selection> selections;
  };
  struct Fetched {
    std::uint32_t step;
    std::size_t mb;
    double checksum;
  };
  BoundedQueue<Selected> to_fetcher(kOverlapDepth);
  BoundedQueue<Fetched> to_compute(kOverlapDepth);
  StepSignal compute_started;
  StepSignal compute_done;
  std::atomic<bool> abort{false};
  std::atomic<std::uint64_t> progress{0};
  std::mutex error_mu;
  std::exception_ptr error;
  // Last (stage, step) reached by each role, for the watchdog diagnostic.
  std::atomic<std::int64_t> where[3] = {-1, -1, -1};
  double busy[5] = {0, 0, 0, 0, 0};  // each slot written by one thread only

  auto stop = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(error_mu);
      if (!error) error = e;
    }
    abort = true;
    to_fetcher.close();
    to_compute.close();
    compute_started.wake();
    compute_done.wake();
  };
  auto guarded = [&](auto body) {
    return [&, body] {
      try {
        body();
      } catch (...) {
        stop(std::current_exception());
      }
    };
  };

  const std::uint32_t steps = engine.steps();
  const std::size_t batches = engine.batches();

  auto selector = guarded([&] {
    for (std::uint32_t t = 0; t < steps && !abort; ++t) {
      // The next step's queries exist only after the previous compute.
      if (t > 0 && !compute_done.wait_for(t - 1, abort)) return;
      for (std::size_t mb = 0; mb < batches; ++mb) {
        where[0] = t;
        const auto t0 = Clock::now();
        Selected msg{t, mb, engine.select(t, mb)};
        busy[0] += seconds_since(t0);
        ++progress;
        if (!to_fetcher.push(std::move(msg))) return;
      }
    }
  });

  auto fetcher = guarded([&] {
    for (std::uint32_t t = 0; t < steps && !abort; ++t) {
      for (std::size_t mb = 0; mb < batches; ++mb) {
        where[1] = t;
        auto msg = to_fetcher.pop();
        if (!msg) return;
        auto t0 = Clock::now();
        const auto wanted = engine.hitmiss(t, mb, std::move(msg->selections));
        busy[1] += seconds_since(t0);
        t0 = Clock::now();
        const double sum = engine.fetch(t, wanted);
        busy[2] += seconds_since(t0);
        ++progress;
        if (!to_compute.push({t, mb, sum})) return;
      }
      // Metadata updates overlap the compute of the same step.
      if (!compute_started.wait_for(t, abort)) return;
      const auto t0 = Clock::now();
      engine.meta();
      busy[4] += seconds_since(t0);
      ++progress;
    }
  });

  double checksum = 0.0;
  auto computer = guarded([&] {
    for (std::uint32_t t = 0; t < steps && !abort; ++t) {
      where[2] = t;
      for (std::size_t mb = 0; mb < batches; ++mb) {
        auto msg = to_compute.pop();
        if (!msg) return;
        checksum += msg->checksum;
      }
      compute_started.post(t);
      const auto t0 = Clock::now();
      engine.compute();
      busy[3] += seconds_since(t0);
      ++progress;
      compute_done.post(t);
    }
  });

  const auto start = Clock::now();
  std::atomic<int> running{3};
  auto wrap = [&](auto fn) {
    return std::thread([&, fn] {
      fn();
      --running;
    });
  };
  std::thread th_select = wrap(selector);
  std::thread th_fetch = wrap(fetcher);
  std::thread th_compute = wrap(computer);

  std::uint64_t seen = progress;
  auto last_change = Clock::now();
  while (running > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    if (progress != seen) {
      seen = progress;
      last_change = Clock::now();
    } else if (seconds_since(last_change) > cfg.watchdog_s && !abort) {
      stop(std::make_exception_ptr(Error(
          ErrorCode::kTimeout,
          "executor watchdog: no progress for " + std::to_string(cfg.watchdog_s) +
              " s (selector at step " + std::to_string(where[0]) + ", fetcher at step " +
              std::to_string(where[1]) + ", computer at step " + std::to_string(where[2]) + ")")));
    }
  }
  th_select.join();
  th_fetch.join();
  th_compute.join();
  if (error) std::rethrow_exception(error);

  report.wall_time_s = seconds_since(start);
  report.fetched_checksum = checksum;
  report.stage_time_s[0] = busy[0];
  report.stage_time_s[1] = busy[1];
  report.stage_time_s[2] = busy[2];
  report.stage_time_s[3] = busy[3];
  report.stage_time_s[4] = busy[4];
  engine.finish();
  return report;
}

}  // namespace kvdrive
