#include <algorithm>

#include "kvdrive/index.hpp"

namespace kvdrive {

std::vector<Chunk> build_chunks(const Matrix& keys, std::size_t chunk_size) {
  require(chunk_size >= 1, ErrorCode::kInvalidArgument, "chunk size must be >= 1");
  require(!keys.empty(), ErrorCode::kInvalidArgument, "cannot chunk an empty key set");
  const std::size_t n = keys.rows();
  const std::size_t d = keys.dim();
  std::vector<Chunk> chunks;
  chunks.reserve((n + chunk_size - 1) / chunk_size);
  std::vector<double> acc(d);
  for (std::size_t begin = 0; begin < n; begin += chunk_size) {
    const std::size_t end = std::min(n, begin + chunk_size);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = begin; t < end; ++t) {
      const auto row = keys.row(t);
      for (std::size_t i = 0; i < d; ++i) acc[i] += row[i];
    }
    Chunk c;
    c.chunk_id = static_cast<std::uint32_t>(chunks.size());
    c.begin = static_cast<TokenIndex>(begin);
    c.end = static_cast<TokenIndex>(end);
    c.representative.resize(d);
    const double count = static_cast<double>(end - begin);
    for (std::size_t i = 0; i < d; ++i) c.representative[i] = static_cast<float>(acc[i] / count);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

double recall(const TokenSet& selected, const TokenSet& exact) {
  require(!exact.empty(), ErrorCode::kInvalidArgument, "recall against an empty exact set");
  return static_cast<double>(set_intersection(selected, exact).size()) /
         static_cast<double>(exact.size());
}

}  // namespace kvdrive
