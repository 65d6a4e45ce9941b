#include <algorithm>
#include <cmath>
#include <limits>

#include "kvdrive/cache.hpp"

namespace kvdrive {

namespace {

constexpr double kMaxExactCombinations = 1e7;

bool fits(double cost, double budget) { return cost <= budget + 1e-9 * std::max(1.0, budget); }

bool nearly_equal(double a, double b) {
  return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace

void BenefitProfile::validate() const {
  const std::size_t p = pairs.size();
  require(windows.size() == p && benefit.size() == p && cost.size() == p,
          ErrorCode::kInvalidArgument, "benefit profile tables disagree on the pair count");
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t m = windows[i].size();
    require(m >= 1 && benefit[i].size() == m && cost[i].size() == m, ErrorCode::kInvalidArgument,
            "pair " + pairs[i].str() + " has inconsistent candidate tables");
    for (std::size_t j = 0; j < m; ++j) {
      require(std::isfinite(benefit[i][j]) && std::isfinite(cost[i][j]) && cost[i][j] >= 0.0,
              ErrorCode::kInvalidArgument, "benefit and cost must be finite, cost >= 0");
      if (j > 0) {
        require(windows[i][j] > windows[i][j - 1] && cost[i][j] > cost[i][j - 1],
                ErrorCode::kInvalidArgument, "candidate sizes must be strictly increasing");
      }
    }
  }
}

BenefitProfile profile_benefit(const SelectionTrace& selections,
                               const std::vector<std::size_t>& candidate_windows,
                               const EvictionPolicy& policy) {
  require(!candidate_windows.empty(), ErrorCode::kInvalidArgument, "no candidate windows");
  std::vector<std::size_t> sizes = candidate_windows;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  const std::size_t streams = selections.stream_count();
  // bytes[s][j]: total bytes fetched by stream s with window sizes[j].
  std::vector<std::vector<double>> bytes(streams, std::vector<double>(sizes.size(), 0.0));
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    CacheRunConfig cfg;
    cfg.policy = policy;
    cfg.capacities.assign(streams, sizes[j]);
    const CacheReport report = simulate_caches(selections, cfg);
    for (const auto& r : report.records) {
      bytes[r.layer * selections.heads + r.head][j] += static_cast<double>(r.fetch_bytes);
    }
  }

  BenefitProfile profile;
  const double per_token = static_cast<double>(entry_bytes(selections.dim));
  for (std::size_t s = 0; s < streams; ++s) {
    profile.pairs.push_back(stream_id(s, selections.heads));
    profile.windows.push_back(sizes);
    std::vector<double> benefit(sizes.size());
    std::vector<double> cost(sizes.size());
    double running = 0.0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
      running = std::max(running, bytes[s][0] - bytes[s][j]);
      benefit[j] = running;
      cost[j] = per_token * static_cast<double>(sizes[j]);
    }
    profile.benefit.push_back(std::move(benefit));
    profile.cost.push_back(std::move(cost));
  }
  return profile;
}

Allocation evaluate_allocation(const BenefitProfile& profile, const std::vector<std::size_t>& choice) {
  require(choice.size() == profile.pair_count(), ErrorCode::kInvalidArgument,
          "allocation must choose one size per pair");
  Allocation a;
  a.choice = choice;
  for (std::size_t p = 0; p < choice.size(); ++p) {
    require(choice[p] < profile.windows[p].size(), ErrorCode::kInvalidArgument,
            "choice out of range for pair " + profile.pairs[p].str());
    a.chosen[profile.pairs[p]] = profile.windows[p][choice[p]];
    a.total_cost += profile.cost[p][choice[p]];
    a.total_benefit += profile.benefit[p][choice[p]];
  }
  return a;
}

Allocation solve_mckp_greedy(const BenefitProfile& profile, double budget) {
  profile.validate();
  const std::size_t pairs = profile.pair_count();
  std::vector<std::size_t> choice(pairs, 0);
  double cost = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) cost += profile.cost[p][0];
  require(fits(cost, budget), ErrorCode::kInfeasible,
          "budget is below the cost of the smallest windows");

  for (;;) {
    std::size_t best = pairs;
    double best_ratio = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < pairs; ++p) {
      const std::size_t j = choice[p];
      if (j + 1 >= profile.windows[p].size()) continue;
      const double dc = profile.cost[p][j + 1] - profile.cost[p][j];
      if (!fits(cost + dc, budget)) continue;
      const double ratio = (profile.benefit[p][j + 1] - profile.benefit[p][j]) / dc;
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best = p;
      }
    }
    if (best == pairs) break;
    cost += profile.cost[best][choice[best] + 1] - profile.cost[best][choice[best]];
    ++choice[best];
  }
  return evaluate_allocation(profile, choice);
}

Allocation solve_mckp_exact(const BenefitProfile& profile, double budget) {
  profile.validate();
  const std::size_t pairs = profile.pair_count();
  double combinations = 1.0;
  double base_cost = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    combinations *= static_cast<double>(profile.windows[p].size());
    base_cost += profile.cost[p][0];
  }
  require(combinations <= kMaxExactCombinations, ErrorCode::kInvalidArgument,
          "exact solver limited to 1e7 combinations");
  require(fits(base_cost, budget), ErrorCode::kInfeasible,
          "budget is below the cost of the smallest windows");

  // Depth-first enumeration in lexicographic order of the choice vector. Ties
  // prefer the lower cost, then the lexicographically smallest choice.
  std::vector<std::size_t> choice(pairs, 0);
  std::vector<std::size_t> best;
  double best_benefit = -std::numeric_limits<double>::infinity();
  double best_cost = std::numeric_limits<double>::infinity();
  // Cheapest completion of pairs [p, end), to prune infeasible prefixes.
  std::vector<double> min_rest(pairs + 1, 0.0);
  for (std::size_t p = pairs; p-- > 0;) min_rest[p] = min_rest[p + 1] + profile.cost[p][0];

  auto visit = [&](auto&& self, std::size_t p, double cost, double benefit) -> void {
    if (p == pairs) {
      const bool better = best.empty() || (benefit > best_benefit && !nearly_equal(benefit, best_benefit)) ||
                          (nearly_equal(benefit, best_benefit) && cost < best_cost &&
                           !nearly_equal(cost, best_cost));
      if (better) {
        best_benefit = benefit;
        best_cost = cost;
        best = choice;
      }
      return;
    }
    for (std::size_t j = 0; j < profile.windows[p].size(); ++j) {
      const double c = cost + profile.cost[p][j];
      if (!fits(c + min_rest[p + 1], budget)) break;  // costs increase with j
      choice[p] = j;
      self(self, p + 1, c, benefit + profile.benefit[p][j]);
    }
    choice[p] = 0;
  };
  visit(visit, 0, 0.0, 0.0);
  return evaluate_allocation(profile, best);
}

}  // namespace kvdrive
