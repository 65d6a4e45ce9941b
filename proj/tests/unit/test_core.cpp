#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "kvdrive/core.hpp"
#include "kvdrive/csv.hpp"

using namespace kvdrive;

TEST_CASE("dot_scores on hand-computed inputs") {
  CHECK(dot_scores(std::vector<float>{1, 0}, {{1, 0}, {0, 1}}) == Scores{1, 0});
  CHECK(dot_scores(std::vector<float>{0, 0}, {{3, -2}, {7, 1}}) == Scores{0, 0});
  CHECK(dot_scores(std::vector<float>{2, 1}, {{1, 1}, {3, -1}}) == Scores{3, 5});
}

TEST_CASE("dot_scores names the mismatched key") {
  try {
    dot_scores(std::vector<float>{1, 0}, {{1, 0}, {1, 0}, {1, 0, 0}});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(e.index() == 2);
    CHECK(e.expected() == 2);
    CHECK(e.actual() == 3);
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

TEST_CASE("exact_topk picks the max and breaks ties by lower index") {
  CHECK(exact_topk(Scores{3, 5, 1}, 1, {}) == TokenSet{1});
  CHECK(exact_topk(Scores{2, 2, 0}, 1, {}) == TokenSet{0});
  CHECK(exact_topk(Scores{9, 5, 1, 7}, 2, {0}) == TokenSet{1, 3});
  CHECK_THROWS_AS(exact_topk(Scores{1, 2}, 2, {0}), Error);
}

TEST_CASE("exact_topk matches a sort-all oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix keys = kvtest::random_matrix(64, 8, rng);
    const auto q = kvtest::random_vector(8, rng);
    const TokenSet pinned{0, 1, 63};
    // Oracle: score every key with a plain float loop, sort by (score desc, index asc).
    std::vector<std::pair<double, TokenIndex>> all;
    for (TokenIndex i = 0; i < 64; ++i) {
      if (contains(pinned, i)) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < 8; ++j) s += static_cast<double>(keys.row(i)[j]) * q[j];
      all.emplace_back(static_cast<float>(s), i);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    TokenSet want;
    for (std::size_t i = 0; i < 8; ++i) want.push_back(all[i].second);
    std::sort(want.begin(), want.end());
    const TokenSet got = exact_topk(q, keys, 8, pinned);
    CHECK(got == want);
    CHECK(set_intersection(got, pinned).empty());
  }
}

TEST_CASE("exact_topk is permutation-equivariant and scale-invariant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix keys = kvtest::random_matrix(48, 6, rng);
    auto q = kvtest::random_vector(6, rng);
    std::vector<TokenIndex> perm(48);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix permuted(48, 6);
    for (std::size_t i = 0; i < 48; ++i) {
      std::copy(keys.row(i).begin(), keys.row(i).end(), permuted.row(perm[i]).begin());
    }
    const TokenSet base = exact_topk(q, keys, 5, {});
    std::vector<TokenIndex> mapped;
    for (TokenIndex t : base) mapped.push_back(perm[t]);
    CHECK(exact_topk(q, permuted, 5, {}) == make_token_set(mapped));

    for (auto& x : q) x *= 3.5f;
    CHECK(exact_topk(q, keys, 5, {}) == base);
  }
}

TEST_CASE("softmax_weights") {
  const Scores half = softmax_weights(Scores{0, 0});
  CHECK(half[0] == doctest::Approx(0.5));
  CHECK(half[1] == doctest::Approx(0.5));

  const Scores sat = softmax_weights(Scores{1000, 0});
  CHECK(sat[0] == doctest::Approx(1.0));
  CHECK(sat[1] == doctest::Approx(0.0));

  const Scores w = softmax_weights(Scores{1, 2, 3});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(w[i] - std::exp(i + 1.0) / z) < 1e-7);

  CHECK_THROWS_AS(softmax_weights(Scores{}), Error);
  CHECK_THROWS_AS(softmax_weights(Scores{1, std::nanf("")}), Error);
}

TEST_CASE("softmax_weights sums to one on large random inputs") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g(0.0f, 20.0f);
  for (std::size_t n : {1ul, 7ul, 1000ul, 1000000ul}) {
    Scores s(n);
    for (auto& x : s) x = g(rng);
    const Scores w = softmax_weights(s);
    double total = 0.0;
    for (float x : w) {
      CHECK(x >= 0.0f);
      total += x;
    }
    CHECK(std::fabs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("sparsity config validation and pinned tokens") {
  SparsityConfig c;
  c.budget_k = 8;
  c.sink_count = 4;
  c.local_count = 4;
  CHECK_NOTHROW(c.validate(16));
  CHECK_THROWS_AS(c.validate(15), Error);
  c.budget_k = 0;
  CHECK_THROWS_AS(c.validate(100), Error);

  c.budget_k = 2;
  CHECK(c.pinned_tokens(10) == TokenSet{0, 1, 2, 3, 6, 7, 8, 9});
  CHECK(c.pinned_tokens(6) == TokenSet{0, 1, 2, 3, 4, 5});
  CHECK(c.budget_fraction(16) == doctest::Approx(0.125));
}

TEST_CASE("token set algebra") {
  const TokenSet a = make_token_set({5, 1, 3, 3});
  const TokenSet b{3, 4, 5};
  CHECK(a == TokenSet{1, 3, 5});
  CHECK(set_union(a, b) == TokenSet{1, 3, 4, 5});
  CHECK(set_intersection(a, b) == TokenSet{3, 5});
  CHECK(set_difference(a, b) == TokenSet{1});
  CHECK(contains(a, 3));
  CHECK_FALSE(contains(a, 4));
}

TEST_CASE("csv validation catches malformed tables") {
  const CsvSchema schema{{"a", ColumnType::kInteger}, {"b", ColumnType::kReal}, {"c", ColumnType::kText}};
  CsvTable t(schema);
  t.row() << 1 << 2.5 << "x";
  t.row() << -3 << 1e-3 << "y";
  const std::string text = t.str(42);
  const CsvValidation ok = validate_csv(text, schema);
  CHECK(ok.ok);
  CHECK(ok.rows == 2);
  CHECK(text.find("# config_hash=") != std::string::npos);

  CHECK_FALSE(validate_csv("a,b,c\n1,2.5,x\n", schema).ok);                        // no metadata line
  CHECK_FALSE(validate_csv("a,b,d\n1,2.5,x\n# config_hash=1 version=0\n", schema).ok);  // header
  CHECK_FALSE(validate_csv("a,b,c\n1.5,2.5,x\n# config_hash=1 version=0\n", schema).ok);  // integer column
  CHECK_FALSE(validate_csv("a,b,c\n1,2.5\n# config_hash=1 version=0\n", schema).ok);  // field count
}
