#include <doctest.h>

#include <functional>

#include "helpers.hpp"
#include "kvdrive/cache.hpp"

using namespace kvdrive;

namespace {

EvictionPolicy la(std::size_t pool = 0) {
  EvictionPolicy p;
  p.pool_size = pool;
  return p;
}

EvictionPolicy lru() {
  EvictionPolicy p;
  p.kind = EvictionKind::kLru;
  return p;
}

// Single-token requests driven through lookup + admit_evict.
std::uint64_t replay_hits(const std::vector<TokenIndex>& seq, std::size_t capacity, EvictionPolicy policy) {
  std::vector<TokenSet> requests;
  for (TokenIndex t : seq) requests.push_back({t});
  if (policy.kind == EvictionKind::kBelady) policy.future = std::make_shared<FutureAccess>(requests);
  WindowCache cache({0, 0}, capacity, {}, 4);
  for (const auto& r : requests) {
    cache.lookup(r);
    cache.admit_evict(r, {{r[0], 1.0f}}, policy);
  }
  return cache.stats().hits;
}

// Best achievable hits over every eviction choice (demand admission).
std::uint64_t brute_force_hits(const std::vector<TokenIndex>& seq, std::size_t capacity) {
  std::function<std::uint64_t(std::size_t, std::vector<TokenIndex>)> best = [&](std::size_t i,
                                                                               std::vector<TokenIndex> res) {
    if (i == seq.size()) return std::uint64_t{0};
    const TokenIndex t = seq[i];
    if (std::find(res.begin(), res.end(), t) != res.end()) return 1 + best(i + 1, res);
    if (res.size() < capacity) {
      res.push_back(t);
      return best(i + 1, res);
    }
    std::uint64_t out = 0;
    for (std::size_t v = 0; v < res.size(); ++v) {
      auto next = res;
      next[v] = t;
      out = std::max(out, best(i + 1, next));
    }
    return out;
  };
  return best(0, {});
}

SelectionTrace small_selections(std::uint64_t seed, double alpha = 0.9, std::uint32_t steps = 16) {
  TraceSpec spec = kvtest::small_spec(seed, 1024, steps);
  spec.persistence = alpha;
  SelectionConfig sc;
  sc.sparsity = kvtest::small_sparsity(1024);
  return compute_selections(generate(spec), sc);
}

CacheReport run(const SelectionTrace& sel, EvictionKind kind, double mult) {
  CacheRunConfig rc;
  rc.policy.kind = kind;
  rc.policy.pool_size = sel.sparsity.budget_k * 5 / 4;
  rc.window_mult = mult;
  return simulate_caches(sel, rc);
}

BenefitProfile random_profile(std::mt19937_64& rng, std::size_t pairs, std::size_t sizes) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BenefitProfile p;
  for (std::size_t i = 0; i < pairs; ++i) {
    p.pairs.push_back({static_cast<std::uint32_t>(i), 0});
    std::vector<std::size_t> w;
    std::vector<double> b;
    std::vector<double> c;
    double benefit = 0.0;
    double cost = 1.0 + 4.0 * u(rng);
    for (std::size_t j = 0; j < sizes; ++j) {
      w.push_back(j + 1);
      if (j > 0) {
        benefit += 10.0 * u(rng);
        cost += 0.5 + 5.0 * u(rng);
      }
      b.push_back(benefit);
      c.push_back(cost);
    }
    p.windows.push_back(w);
    p.benefit.push_back(b);
    p.cost.push_back(c);
  }
  return p;
}

// Plain enumeration, independent of the library's pruned search.
double enumerate_best(const BenefitProfile& p, double budget) {
  std::vector<std::size_t> choice(p.pair_count(), 0);
  double best = -1.0;
  for (;;) {
    double cost = 0.0;
    double benefit = 0.0;
    for (std::size_t i = 0; i < choice.size(); ++i) {
      cost += p.cost[i][choice[i]];
      benefit += p.benefit[i][choice[i]];
    }
    if (cost <= budget + 1e-9) best = std::max(best, benefit);
    std::size_t i = 0;
    while (i < choice.size() && ++choice[i] == p.windows[i].size()) choice[i++] = 0;
    if (i == choice.size()) break;
  }
  return best;
}

}  // namespace

TEST_CASE("lookup on an empty cache and on pinned tokens") {
  WindowCache cache({0, 1}, 4, {0, 1, 9}, 8);
  const LookupResult miss = cache.lookup({1, 2});
  CHECK(miss.hits == TokenSet{1});
  CHECK(miss.misses == TokenSet{2});
  WindowCache empty({0, 0}, 4, {}, 8);
  const LookupResult r = empty.lookup({1, 2});
  CHECK(r.hits.empty());
  CHECK(r.misses == TokenSet{1, 2});
  CHECK(empty.stats().bytes_fetched == 2 * entry_bytes(8));
  CHECK(empty.size() == 0);

  WindowCache pinned({0, 0}, 4, {0, 1, 2}, 8);
  const LookupResult p = pinned.lookup({0, 2});
  CHECK(p.misses.empty());
  CHECK(pinned.stats().bytes_fetched == 0);
}

TEST_CASE("lookahead evicts the lowest current score") {
  WindowCache cache({0, 0}, 2, {}, 4);
  const TokenIndex a = 10, b = 11, c = 12;
  cache.admit_evict({a, b}, {{a, 2.0f}, {b, 1.0f}}, la());
  const TokenSet evicted = cache.admit_evict({c}, {{c, 3.0f}, {a, 2.0f}, {b, 1.0f}}, la());
  CHECK(evicted == TokenSet{b});
  CHECK(cache.resident_tokens() == TokenSet{a, c});
}

TEST_CASE("lookahead decays unscored residents") {
  WindowCache cache({0, 0}, 2, {}, 4);
  EvictionPolicy p = la();
  p.decay = 0.5;
  cache.admit_evict({1}, {{1, 4.0f}}, p);
  cache.admit_evict({2}, {{2, 1.5f}}, p);  // token 1 now counts 4 * 0.5 = 2
  cache.admit_evict({3}, {{3, 9.0f}}, p);  // token 1: 4 * 0.25 = 1, token 2: 1.5 * 0.5 = 0.75
  CHECK(cache.resident_tokens() == TokenSet{1, 3});
}

TEST_CASE("lru evicts the least recently requested token") {
  WindowCache cache({0, 0}, 2, {}, 4);
  cache.admit_evict({1}, {}, lru());
  cache.admit_evict({2}, {}, lru());
  cache.admit_evict({1}, {}, lru());
  CHECK(cache.admit_evict({3}, {}, lru()) == TokenSet{2});
}

TEST_CASE("admit_evict rejects oversize selections and Belady without a future") {
  WindowCache cache({0, 0}, 1, {}, 4);
  CHECK_THROWS_AS(cache.admit_evict({1, 2}, {}, la()), Error);
  EvictionPolicy belady;
  belady.kind = EvictionKind::kBelady;
  CHECK_THROWS_AS(cache.admit_evict({1}, {}, belady), Error);
  // Pinned tokens do not count against the window.
  WindowCache pinned({0, 0}, 1, {1}, 4);
  CHECK_NOTHROW(pinned.admit_evict({1, 2}, {}, la()));
}

TEST_CASE("Belady beats LRU on a cyclic pattern") {
  const std::vector<TokenIndex> cycle{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
  EvictionPolicy belady;
  belady.kind = EvictionKind::kBelady;
  const auto belady_hits = replay_hits(cycle, 2, belady);
  const auto lru_hits = replay_hits(cycle, 2, lru());
  CHECK(lru_hits == 0);
  CHECK(belady_hits > lru_hits);
  // Hand simulation: hits at positions 3, 5, 7, 9, 11 (one per miss pair after warm-up).
  CHECK(belady_hits == 5);
}

TEST_CASE("Belady matches a brute-force optimum on small sequences") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<TokenIndex> tok(0, 4);
  EvictionPolicy belady;
  belady.kind = EvictionKind::kBelady;
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<TokenIndex> seq(10);
    for (auto& t : seq) t = tok(rng);
    const std::size_t cap = 1 + trial % 3;
    CHECK(replay_hits(seq, cap, belady) == brute_force_hits(seq, cap));
  }
}

TEST_CASE("capacity invariant under random traces") {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<TokenIndex> tok(0, 63);
  for (EvictionKind kind : {EvictionKind::kLookahead, EvictionKind::kLru, EvictionKind::kBelady}) {
    std::vector<TokenSet> requests;
    for (int s = 0; s < 40; ++s) {
      std::vector<TokenIndex> v;
      for (int i = 0; i < 6; ++i) v.push_back(tok(rng));
      requests.push_back(make_token_set(v));
    }
    EvictionPolicy p;
    p.kind = kind;
    p.future = std::make_shared<FutureAccess>(requests);
    WindowCache cache({0, 0}, 8, {0, 1}, 4);
    for (const auto& r : requests) {
      std::vector<ScoredToken> scores;
      for (TokenIndex t : r) scores.push_back({t, std::uniform_real_distribution<float>(0, 1)(rng)});
      cache.lookup(r);
      cache.admit_evict(r, scores, p);
      CHECK(cache.size() <= 8);
      CHECK(set_intersection(cache.resident_tokens(), cache.pinned()).empty());
    }
  }
}

TEST_CASE("an unbounded window hits everything after the first pass") {
  TraceSpec spec = kvtest::small_spec(1, 512, 8);
  spec.persistence = 1.0;
  SelectionConfig sc;
  sc.sparsity = kvtest::small_sparsity(512);
  const SelectionTrace sel = compute_selections(generate(spec), sc);
  CacheRunConfig rc;
  rc.policy.pool_size = sc.pool_size();
  rc.capacities.assign(sel.stream_count(), 512);
  const CacheReport report = simulate_caches(sel, rc);
  CHECK(report.hit_rate(1) == 1.0);
  CHECK(report.hit_rate(0) < 1.0);
  // A frozen query with a x1 window also hits everything after step 0.
  CHECK(run(sel, EvictionKind::kLookahead, 1.0).hit_rate(1) == 1.0);
}

TEST_CASE("a zero window refetches the whole budget every step") {
  const SelectionTrace sel = small_selections(3);
  const CacheReport report = run(sel, EvictionKind::kLookahead, 0.0);
  for (const auto& r : report.records) {
    CHECK(r.hits == 0);
    CHECK(r.fetch_bytes == sel.sparsity.budget_k * entry_bytes(sel.dim));
  }
}

TEST_CASE("fetch bytes do not grow with the window") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    for (double alpha : {0.0, 0.6, 0.9}) {
      const SelectionTrace sel = small_selections(seed, alpha);
      std::uint64_t previous = UINT64_MAX;
      for (double mult : {0.0, 1.0, 2.0, 3.0, 4.0}) {
        const std::uint64_t bytes = run(sel, EvictionKind::kLookahead, mult).total_fetch_bytes();
        CHECK(bytes <= previous);
        previous = bytes;
      }
    }
  }
}

TEST_CASE("lookahead retention is nested across window sizes") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const SelectionTrace sel = small_selections(seed);
    const std::size_t k = sel.sparsity.budget_k;
    EvictionPolicy p = la(k * 5 / 4);
    for (std::size_t s = 0; s < sel.stream_count(); ++s) {
      WindowCache small({0, 0}, k, {}, sel.dim);
      WindowCache large({0, 0}, 2 * k, {}, sel.dim);
      for (const auto& step : sel.steps) {
        CHECK(small.lookup(step[s].critical).misses.size() >= large.lookup(step[s].critical).misses.size());
        small.admit_evict(step[s].critical, step[s].pool, p);
        large.admit_evict(step[s].critical, step[s].pool, p);
        CHECK(set_difference(small.resident_tokens(), large.resident_tokens()).empty());
      }
    }
  }
}

TEST_CASE("Belady dominates the online policies") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SelectionTrace sel = small_selections(seed);
    for (double mult : {1.0, 2.0}) {
      const double b = run(sel, EvictionKind::kBelady, mult).hit_rate(1);
      CHECK(b >= run(sel, EvictionKind::kLookahead, mult).hit_rate(1));
      CHECK(b >= run(sel, EvictionKind::kLru, mult).hit_rate(1));
    }
  }
}

TEST_CASE("cache report csv and metrics") {
  const SelectionTrace sel = small_selections(2, 0.9, 4);
  const CacheReport report = run(sel, EvictionKind::kLru, 2.0);
  CHECK(report.records.size() == 4 * sel.stream_count());
  CsvTable table(cache_report_schema());
  append_csv(table, report);
  CHECK(validate_csv(table.str(1), cache_report_schema()).ok);
  CHECK(table.size() == report.records.size());
  std::uint64_t total = 0;
  for (const auto& r : report.records) total += r.fetch_bytes;
  CHECK(report.total_fetch_bytes() == total);
  CHECK(report.mean_step_fetch_bytes() == doctest::Approx(static_cast<double>(total) / 4.0));
  CHECK(report.stream_hit_rates().size() == sel.stream_count());
}

TEST_CASE("index selection drives the cache like exact selection") {
  TraceSpec spec = kvtest::small_spec(4, 1024, 8);
  SelectionConfig sc;
  sc.mode = SelectionMode::kIndex;
  sc.sparsity = kvtest::small_sparsity(1024);
  const DecodingTrace trace = generate(spec);
  CacheRunConfig rc;
  rc.policy.pool_size = sc.pool_size();
  const CacheReport a = run_trace(trace, sc, rc);
  const CacheReport b = run_trace(trace, sc, rc);
  CHECK(a == b);
  CHECK(a.hit_rate(1) > 0.0);
  CacheRunConfig bad = rc;
  bad.capacities = {1, 2};
  CHECK_THROWS_AS(run_trace(trace, sc, bad), Error);
}

TEST_CASE("benefit profile anchors and cost") {
  const SelectionTrace sel = small_selections(5);
  const std::size_t k = sel.sparsity.budget_k;
  const BenefitProfile p = profile_benefit(sel, {2 * k, k}, la(k * 5 / 4));
  CHECK_NOTHROW(p.validate());
  for (std::size_t i = 0; i < p.pair_count(); ++i) {
    CHECK(p.windows[i] == std::vector<std::size_t>{k, 2 * k});
    CHECK(p.benefit[i][0] == 0.0);
    CHECK(p.benefit[i][1] >= 0.0);
    CHECK(p.cost[i][1] == doctest::Approx(2.0 * k * entry_bytes(sel.dim)));
  }
}

TEST_CASE("benefit without locality is small") {
  const SelectionTrace sel = small_selections(6, 0.0);
  const std::size_t k = sel.sparsity.budget_k;
  const BenefitProfile p = profile_benefit(sel, {0, k, 2 * k}, la(k * 5 / 4));
  const double baseline = static_cast<double>(sel.steps.size() * k * entry_bytes(sel.dim));
  // Independent queries can only reuse by chance: a window of w tokens holds
  // about w / n of the next selection.
  const double unpinned = static_cast<double>(1024 - sel.sparsity.pinned_tokens(1024).size());
  const double chance = static_cast<double>(2 * k) / unpinned;
  for (std::size_t i = 0; i < p.pair_count(); ++i) CHECK(p.benefit[i].back() < 1.5 * chance * baseline);
}

TEST_CASE("persistent heads gain more from a wider window") {
  TraceSpec spec = kvtest::small_spec(7, 1024, 24);
  spec.persistence_overrides = {0.95, 0.3, 0.95, 0.3};
  SelectionConfig sc;
  sc.sparsity = kvtest::small_sparsity(1024);
  const SelectionTrace sel = compute_selections(generate(spec), sc);
  const std::size_t k = sc.sparsity.budget_k;
  const BenefitProfile p = profile_benefit(sel, {0, k, 2 * k, 4 * k}, la(sc.pool_size()));
  for (std::size_t layer = 0; layer < 2; ++layer) {
    CHECK(p.benefit[2 * layer].back() >= 2.0 * p.benefit[2 * layer + 1].back());
  }
}

TEST_CASE("greedy allocation edge budgets") {
  std::mt19937_64 rng(31);
  const BenefitProfile p = random_profile(rng, 4, 3);
  double max_cost = 0.0;
  double min_cost = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    max_cost += p.cost[i].back();
    min_cost += p.cost[i].front();
  }
  for (auto s : solve_mckp_greedy(p, max_cost).choice) CHECK(s == 2);
  for (auto s : solve_mckp_greedy(p, min_cost).choice) CHECK(s == 0);
  CHECK_THROWS_AS(solve_mckp_greedy(p, min_cost * 0.5), Error);
  CHECK_THROWS_AS(solve_mckp_exact(p, min_cost * 0.5), Error);
}

TEST_CASE("exact allocation picks the best affordable size") {
  BenefitProfile p;
  p.pairs = {{0, 0}};
  p.windows = {{1, 2, 3}};
  p.benefit = {{0, 5, 9}};
  p.cost = {{1, 2, 3}};
  const Allocation a = solve_mckp_exact(p, 2.5);
  CHECK(a.choice == std::vector<std::size_t>{1});
  CHECK(a.chosen.at({0, 0}) == 2);
  CHECK(a.total_benefit == 5.0);
}

TEST_CASE("exact allocation breaks benefit ties by cost") {
  BenefitProfile p;
  p.pairs = {{0, 0}, {0, 1}};
  p.windows = {{1, 2}, {1, 2}};
  p.benefit = {{0, 0}, {0, 0}};
  p.cost = {{1, 2}, {1, 2}};
  const Allocation a = solve_mckp_exact(p, 4.0);
  CHECK(a.choice == std::vector<std::size_t>{0, 0});
  CHECK(a.total_cost == 2.0);
}

TEST_CASE("exact solver beats greedy on a ratio trap") {
  // Greedy spends the budget on pair 0's high-ratio first step and then
  // cannot afford pair 1's large single jump.
  BenefitProfile p;
  p.pairs = {{0, 0}, {0, 1}, {0, 2}};
  p.windows = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  p.benefit = {{0, 3, 3}, {0, 0, 10}, {0, 0, 0}};
  p.cost = {{1, 2, 3}, {1, 5, 6}, {1, 2, 3}};
  const double budget = 3.0 + 5.0;
  const Allocation g = solve_mckp_greedy(p, budget);
  const Allocation e = solve_mckp_exact(p, budget);
  CHECK(e.total_benefit == doctest::Approx(enumerate_best(p, budget)));
  CHECK(e.total_benefit > g.total_benefit);
}

TEST_CASE("greedy is feasible and bounded by the optimum") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t pairs = 1 + trial % 6;
    const std::size_t sizes = 2 + trial % 4;
    const BenefitProfile p = random_profile(rng, pairs, sizes);
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
      lo += p.cost[i].front();
      hi += p.cost[i].back();
    }
    const double budget = lo + (hi - lo) * std::uniform_real_distribution<double>(0.2, 0.8)(rng);
    const Allocation g = solve_mckp_greedy(p, budget);
    const Allocation e = solve_mckp_exact(p, budget);
    CHECK(g.total_cost <= budget + 1e-9);
    CHECK(e.total_cost <= budget + 1e-9);
    CHECK(e.total_benefit == doctest::Approx(enumerate_best(p, budget)));
    CHECK(g.total_benefit <= e.total_benefit + 1e-9);
    // Greedy never loses to the uniform-minimum start.
    CHECK(g.total_benefit >= evaluate_allocation(p, std::vector<std::size_t>(pairs, 0)).total_benefit);
  }
}

TEST_CASE("exact solver refuses huge instances") {
  std::mt19937_64 rng(33);
  const BenefitProfile p = random_profile(rng, 11, 5);  // 5^11 > 1e7
  CHECK_THROWS_AS(solve_mckp_exact(p, 1e9), Error);
}
