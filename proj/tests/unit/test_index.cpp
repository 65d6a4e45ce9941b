#include <doctest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"
#include "kvdrive/index.hpp"
#include "kvdrive/workload.hpp"

using namespace kvdrive;

namespace {

Matrix rows_of(const std::vector<std::vector<float>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

SparsityConfig no_pins(std::size_t k) {
  SparsityConfig c;
  c.budget_k = k;
  c.sink_count = 0;
  c.local_count = 0;
  return c;
}

}  // namespace

TEST_CASE("build_chunks splits and averages") {
  std::mt19937_64 rng(1);
  const Matrix keys = kvtest::random_matrix(9, 3, rng);
  const auto chunks = build_chunks(keys, 4);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[2].begin == 8);
  CHECK(chunks[2].size() == 1);
  for (const auto& c : chunks) {
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (TokenIndex t = c.begin; t < c.end; ++t) mean += keys.row(t)[j];
      mean /= static_cast<double>(c.size());
      CHECK(std::fabs(c.representative[j] - mean) < 1e-5);
    }
  }
  CHECK(build_chunks(kvtest::random_matrix(8, 3, rng), 4).size() == 2);

  const auto unit = build_chunks(keys, 1);
  REQUIRE(unit.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(std::equal(unit[i].representative.begin(), unit[i].representative.end(), keys.row(i).begin()));
  }
  CHECK_THROWS_AS(build_chunks(Matrix(), 4), Error);
  CHECK_THROWS_AS(build_chunks(keys, 0), Error);
}

TEST_CASE("build_index separates two clouds") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0.0f, 0.01f);
  Matrix keys(64, 4);
  for (std::size_t i = 0; i < 64; ++i) {
    const float base = i < 32 ? 10.0f : -10.0f;
    for (std::size_t j = 0; j < 4; ++j) keys.row(i)[j] = base + g(rng);
  }
  const HierIndex index = build_index(keys, 4, 2, 9);
  CHECK_NOTHROW(index.validate());
  std::set<std::uint32_t> owners_low;
  std::set<std::uint32_t> owners_high;
  for (const auto& c : index.chunks()) (c.begin < 32 ? owners_low : owners_high).insert(index.owner_of(c.chunk_id));
  CHECK(owners_low.size() == 1);
  CHECK(owners_high.size() == 1);
  CHECK(*owners_low.begin() != *owners_high.begin());
}

TEST_CASE("build_index with one centroid per chunk") {
  std::mt19937_64 rng(3);
  const Matrix keys = kvtest::random_matrix(40, 5, rng);
  const HierIndex index = build_index(keys, 4, 10, 1);
  for (const auto& c : index.centroids()) {
    REQUIRE(c.members.size() == 1);
    const auto& rep = index.chunks()[c.members[0]].representative;
    for (std::size_t j = 0; j < 5; ++j) CHECK(c.vector[j] == doctest::Approx(rep[j]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(build_index(keys, 4, 11, 1), Error);
}

TEST_CASE("build_index is deterministic and covers every chunk once") {
  std::mt19937_64 rng(4);
  const Matrix keys = kvtest::random_matrix(203, 8, rng);
  const HierIndex a = build_index(keys, 4, 7, 42);
  const HierIndex b = build_index(keys, 4, 7, 42);
  CHECK(a == b);
  std::size_t members = 0;
  for (const auto& c : a.centroids()) {
    CHECK_FALSE(c.members.empty());
    members += c.members.size();
  }
  CHECK(members == a.chunks().size());
  CHECK(a.representative_count() == 51 + 7);
}

TEST_CASE("k-means inertia beats a random assignment") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix pts = kvtest::random_matrix(120, 6, rng);
    const KMeansResult km = kmeans(pts, 8, seed);
    CHECK(km.inertia == doctest::Approx(inertia(pts, km.centers, km.assignment)));

    // Oracle: random labels, centers at the label means.
    std::uniform_int_distribution<std::uint32_t> pick(0, 7);
    std::vector<std::uint32_t> labels(120);
    for (auto& l : labels) l = pick(rng);
    Matrix centers(8, 6);
    std::vector<double> counts(8, 0.0);
    for (std::size_t i = 0; i < 120; ++i) {
      counts[labels[i]] += 1.0;
      for (std::size_t j = 0; j < 6; ++j) centers.row(labels[i])[j] += pts.row(i)[j];
    }
    for (std::size_t c = 0; c < 8; ++c) {
      for (auto& x : centers.row(c)) x = counts[c] > 0 ? static_cast<float>(x / counts[c]) : 0.0f;
    }
    CHECK(km.inertia <= inertia(pts, centers, labels));
  }
}

TEST_CASE("degenerate index equals exact top-k") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 50 + seed * 3;
    const Matrix keys = kvtest::random_matrix(n, 8, rng, true);
    const HierIndex index = build_index(keys, 1, n, seed);
    SparsityConfig cfg;
    cfg.budget_k = 1 + seed % 9;
    cfg.sink_count = seed % 3;
    cfg.local_count = seed % 5;
    const auto q = kvtest::random_vector(8, rng);
    const Selection sel = select_critical(index, keys, q, cfg);
    CHECK(sel.critical == exact_topk(q, keys, cfg.budget_k, cfg.pinned_tokens(n)));
    CHECK(sel.pinned == cfg.pinned_tokens(n));
  }
}

TEST_CASE("select_critical follows an aligned chunk") {
  // Four orthogonal directions, one per chunk of four tokens.
  std::vector<std::vector<float>> rows;
  for (int c = 0; c < 4; ++c) {
    for (int t = 0; t < 4; ++t) {
      std::vector<float> r(4, 0.0f);
      r[c] = 1.0f - 0.01f * t;
      rows.push_back(r);
    }
  }
  const Matrix keys = rows_of(rows);
  const HierIndex index = build_index(keys, 4, 4, 1);
  const std::vector<float> q{0, 0, 1, 0};
  const Selection sel = select_critical(index, keys, q, no_pins(4));
  CHECK(sel.critical == TokenSet{8, 9, 10, 11});
  const Selection two = select_critical(index, keys, q, no_pins(2));
  CHECK(two.critical == TokenSet{8, 9});
}

TEST_CASE("select_critical always keeps the pinned tokens and the budget") {
  std::mt19937_64 rng(8);
  const Matrix keys = kvtest::random_matrix(512, 16, rng, true);
  const HierIndex index = build_index(keys, 4, 32, 3);
  SparsityConfig cfg;
  cfg.budget_k = 32;
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = kvtest::random_vector(16, rng);
    const Selection sel = select_critical(index, keys, q, cfg);
    CHECK(sel.critical.size() == 32);
    CHECK(set_intersection(sel.critical, sel.pinned).empty());
    const TokenSet all = sel.tokens();
    for (TokenIndex t : cfg.pinned_tokens(512)) CHECK(contains(all, t));
  }
  SparsityConfig too_big;
  too_big.budget_k = 512;
  CHECK_THROWS_AS(select_critical(index, keys, kvtest::random_vector(16, rng), too_big), Error);
}

TEST_CASE("index recall on clustered traces") {
  TraceSpec spec = kvtest::small_spec(1, 4096, 16);
  spec.layers = 1;
  spec.heads = 2;
  spec.cluster_count = 64;
  const DecodingTrace trace = generate(spec);
  SparsityConfig cfg;
  cfg.budget_k = 256;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < trace.stream_count(); ++s) {
    const HierIndex index = build_index(trace.keys(s), 4, 4096 / 16, 7);
    for (std::size_t t = 0; t < trace.steps(); ++t) {
      const auto q = trace.query(t, s);
      total += recall(select_critical(index, trace.keys(s), q, cfg).critical,
                      select_exact(trace.keys(s), q, cfg).critical);
      ++count;
    }
  }
  CHECK(total / static_cast<double>(count) >= 0.9);
}

TEST_CASE("recall is monotone in the centroid count") {
  double at_q = 0.0;
  double at_2q = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    TraceSpec spec = kvtest::small_spec(seed, 2048, 4);
    spec.layers = 1;
    spec.heads = 1;
    const DecodingTrace trace = generate(spec);
    SparsityConfig cfg;
    cfg.budget_k = 128;
    const HierIndex small = build_index(trace.keys(0), 4, 32, seed);
    const HierIndex large = build_index(trace.keys(0), 4, 64, seed);
    for (std::size_t t = 0; t < trace.steps(); ++t) {
      const auto q = trace.query(t, 0);
      const TokenSet exact = select_exact(trace.keys(0), q, cfg).critical;
      at_q += recall(select_critical(small, trace.keys(0), q, cfg).critical, exact);
      at_2q += recall(select_critical(large, trace.keys(0), q, cfg).critical, exact);
    }
  }
  CHECK(at_2q / 80.0 >= at_q / 80.0 - 0.02);
}

TEST_CASE("index footprint at the default ratio") {
  std::mt19937_64 rng(6);
  const std::size_t n = 4096;
  const Matrix keys = kvtest::random_matrix(n, 8, rng, true);
  const HierIndex index = build_index(keys, 4, n / 16, 1);
  CHECK(index.representative_count() == n / 4 + n / 16);
  CHECK(index.representative_count() <= 5 * n / 16);
  CHECK(build_minmax_index(keys, 4).representative_count() == 2 * (n / 4));
}

TEST_CASE("minmax bound dominates every member score") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix keys = kvtest::random_matrix(8, 6, rng);
    const MinMaxIndex index = build_minmax_index(keys, 8);
    const auto q = kvtest::random_vector(6, rng);
    float best = -1e30f;
    for (std::size_t i = 0; i < 8; ++i) best = std::max(best, dot(q, keys.row(i)));
    CHECK(minmax_bound(index.chunks[0], q) >= best - 1e-5f);
  }
}

TEST_CASE("minmax with equal keys collapses to the key score") {
  Matrix keys(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    keys.row(i)[0] = 0.5f;
    keys.row(i)[1] = -1.0f;
    keys.row(i)[2] = 2.0f;
  }
  const MinMaxIndex index = build_minmax_index(keys, 4);
  const std::vector<float> q{1.0f, 2.0f, -0.5f};
  CHECK(minmax_bound(index.chunks[0], q) == doctest::Approx(dot(q, keys.row(0))));
  CHECK(index.chunks[0].min == index.chunks[0].max);
  // One chunk holds all tokens, so it is always chosen.
  CHECK(select_minmax(index, keys, q, no_pins(2)).critical.size() == 2);
}

TEST_CASE("flat k-means selection returns the budget") {
  std::mt19937_64 rng(13);
  const Matrix keys = kvtest::random_matrix(256, 8, rng, true);
  const FlatIndex index = build_flat_index(keys, 16, 1);
  CHECK(index.representative_count() == 16);
  SparsityConfig cfg;
  cfg.budget_k = 20;
  const Selection sel = select_flat(index, keys, kvtest::random_vector(8, rng), cfg);
  CHECK(sel.critical.size() == 20);
  CHECK(set_intersection(sel.critical, sel.pinned).empty());
}

TEST_CASE("recall ratios") {
  CHECK(recall({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(recall({4, 5}, {1, 2, 3}) == 0.0);
  CHECK(recall({1, 2, 3, 20}, {1, 2, 3, 4, 5, 6, 7, 8}) == doctest::Approx(0.375));
  CHECK_THROWS_AS(recall({1}, {}), Error);
}

TEST_CASE("index serialization round trip") {
  std::mt19937_64 rng(14);
  const Matrix keys = kvtest::random_matrix(101, 4, rng);
  const HierIndex index = build_index(keys, 4, 6, 2);
  std::stringstream ss;
  write_index(ss, index);
  CHECK(read_index(ss) == index);

  std::string bytes;
  {
    std::stringstream out;
    write_index(out, index);
    bytes = out.str();
  }
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_index(truncated), Error);
  bytes[0] = 'X';
  std::stringstream bad_magic(bytes);
  CHECK_THROWS_AS(read_index(bad_magic), Error);
}
