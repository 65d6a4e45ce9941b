#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "kvdrive/core.hpp"
#include "kvdrive/workload.hpp"

namespace kvtest {

inline kvdrive::Matrix random_matrix(std::size_t rows, std::size_t dim, std::mt19937_64& rng,
                                     bool unit = false) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  kvdrive::Matrix m(rows, dim);
  for (auto& x : m.data()) x = g(rng);
  if (unit) {
    for (std::size_t i = 0; i < rows; ++i) kvdrive::normalize(m.row(i));
  }
  return m;
}

inline std::vector<float> random_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = g(rng);
  return v;
}

// Small trace for fast tests.
inline kvdrive::TraceSpec small_spec(std::uint64_t seed = 1, std::uint32_t n = 1024,
                                     std::uint32_t steps = 16) {
  kvdrive::TraceSpec s;
  s.context_length = n;
  s.steps = steps;
  s.cluster_count = 16;
  s.seed = seed;
  return s;
}

inline kvdrive::SparsityConfig small_sparsity(std::size_t n) {
  kvdrive::SparsityConfig c;
  c.budget_k = n / 16;
  return c;
}

// Scratch file removed on scope exit.
class TempPath {
 public:
  explicit TempPath(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("kvdrive-test-" + std::to_string(::getpid()) + "-" + name)) {}
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace kvtest
