#include <algorithm>
#include <cmath>
#include <limits>

#include "kvdrive/index.hpp"
#include "kvdrive/rng.hpp"

namespace kvdrive {

namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    acc += diff * diff;
  }
  return acc;
}

struct Nearest {
  std::uint32_t center = 0;
  double distance = 0.0;
};

Nearest nearest_center(std::span<const float> point, const Matrix& centers) {
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    const double dist = squared_distance(point, centers.row(c));
    if (dist < best.distance) best = {static_cast<std::uint32_t>(c), dist};
  }
  return best;
}

Matrix seed_plus_plus(const Matrix& points, std::size_t k, CounterRng& rng) {
  const std::size_t n = points.rows();
  Matrix centers(k, points.dim());
  std::vector<bool> chosen(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    chosen[pick] = true;
    std::copy_n(points.row(pick).begin(), points.dim(), centers.row(c).begin());
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(c)));
      total += nearest[i];
    }
    if (total <= 0.0) {
      // Remaining points duplicate chosen centers; fall back to first unchosen.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      continue;
    }
    const double target = rng.uniform() * total;
    double cumulative = 0.0;
    pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      cumulative += nearest[i];
      if (cumulative > target && nearest[i] > 0.0) {
        pick = i;
        break;
      }
    }
    if (pick == n) {
      for (std::size_t i = n; i-- > 0;) {
        if (nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
  }
  return centers;
}

void recompute_centers(const Matrix& points, std::span<const std::uint32_t> assignment,
                       Matrix& centers) {
  const std::size_t d = points.dim();
  std::vector<double> sums(centers.rows() * d, 0.0);
  std::vector<std::size_t> counts(centers.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto row = points.row(i);
    double* sum = &sums[assignment[i] * d];
    for (std::size_t j = 0; j < d; ++j) sum[j] += row[j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    if (counts[c] == 0) continue;
    auto center = centers.row(c);
    for (std::size_t j = 0; j < d; ++j) {
      center[j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
    }
  }
}

// Moves one point into every empty cluster. Returns true if anything moved.
bool repair_empty(const Matrix& points, std::vector<std::uint32_t>& assignment, Matrix& centers) {
  const std::size_t k = centers.rows();
  bool moved = false;
  while (true) {
    std::vector<std::size_t> counts(k, 0);
    for (auto a : assignment) ++counts[a];
    const auto empty = std::find(counts.begin(), counts.end(), 0u);
    if (empty == counts.end()) return moved;
    const auto largest = static_cast<std::uint32_t>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t farthest = 0;
    double farthest_distance = -1.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (assignment[i] != largest) continue;
      const double dist = squared_distance(points.row(i), centers.row(largest));
      if (dist > farthest_distance) {
        farthest = i;
        farthest_distance = dist;
      }
    }
    const auto target = static_cast<std::uint32_t>(empty - counts.begin());
    assignment[farthest] = target;
    std::copy_n(points.row(farthest).begin(), points.dim(), centers.row(target).begin());
    moved = true;
  }
}

}  // namespace

double inertia(const Matrix& points, const Matrix& centers,
               std::span<const std::uint32_t> assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    total += squared_distance(points.row(i), centers.row(assignment[i]));
  }
  return total;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options) {
  require(k >= 1, ErrorCode::kInvalidArgument, "k-means needs at least one cluster");
  require(k <= points.rows(), ErrorCode::kInvalidArgument,
          "k-means with " + std::to_string(k) + " clusters over " +
              std::to_string(points.rows()) + " points");
  CounterRng rng(hash_combine(seed, 0x6B6D65616E73ULL));
  KMeansResult result;
  result.centers = seed_plus_plus(points, k, rng);
  result.assignment.assign(points.rows(), 0);

  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    for (std::size_t i = 0; i < points.rows(); ++i) {
      result.assignment[i] = nearest_center(points.row(i), result.centers).center;
    }
    repair_empty(points, result.assignment, result.centers);
    recompute_centers(points, result.assignment, result.centers);
    result.inertia = inertia(points, result.centers, result.assignment);
    result.iterations = iter + 1;
    const double change = std::abs(previous - result.inertia);
    if (std::isfinite(previous) &&
        change <= options.relative_tolerance * std::max(previous, 1e-300)) {
      break;
    }
    previous = result.inertia;
  }
  return result;
}

}  // namespace kvdrive
