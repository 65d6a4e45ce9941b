#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "kvdrive/core.hpp"

namespace kvdrive {

struct Chunk {
  std::uint32_t chunk_id = 0;
  TokenIndex begin = 0;  // token range [begin, end)
  TokenIndex end = 0;
  std::vector<float> representative;

  std::size_t size() const { return end - begin; }
  bool operator==(const Chunk&) const = default;
};

struct Centroid {
  std::uint32_t centroid_id = 0;
  std::vector<float> vector;
  std::vector<std::uint32_t> members;  // chunk ids, ascending

  bool operator==(const Centroid&) const = default;
};

struct KMeansOptions {
  std::size_t max_iterations = 25;
  double relative_tolerance = 1e-4;
};

struct KMeansResult {
  Matrix centers;
  std::vector<std::uint32_t> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

// k-means++ seeding and Lloyd iterations. Deterministic for a fixed seed.
// Clusters that go empty take the point farthest from its center in the
// currently largest cluster.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& options = {});

double inertia(const Matrix& points, const Matrix& centers,
               std::span<const std::uint32_t> assignment);

std::vector<Chunk> build_chunks(const Matrix& keys, std::size_t chunk_size);

class HierIndex {
 public:
  HierIndex() = default;
  HierIndex(std::vector<Chunk> chunks, std::vector<Centroid> centroids, std::size_t chunk_size,
            std::size_t token_count, std::size_t dim);

  const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
  const std::vector<Centroid>& centroids() const noexcept { return centroids_; }
  std::size_t chunk_size() const noexcept { return chunk_size_; }
  std::size_t token_count() const noexcept { return token_count_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint32_t owner_of(std::uint32_t chunk_id) const { return owner_.at(chunk_id); }
  std::uint32_t chunk_of(TokenIndex token) const {
    return static_cast<std::uint32_t>(token / chunk_size_);
  }

  // Chunk representatives plus centroid vectors.
  std::size_t representative_count() const { return chunks_.size() + centroids_.size(); }

  // Throws kFormat when structural invariants fail (coverage, ownership).
  void validate() const;

  bool operator==(const HierIndex&) const = default;

 private:
  std::vector<Chunk> chunks_;
  std::vector<Centroid> centroids_;
  std::size_t chunk_size_ = 1;
  std::size_t token_count_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> owner_;
};

HierIndex build_index(const Matrix& keys, std::size_t chunk_size, std::size_t n_centroids,
                      std::uint64_t seed, const KMeansOptions& options = {});

// Result of one selection: `critical` holds exactly budget_k non-pinned
// tokens, `pinned` the sink/local tokens, `pool` per-token scores of the best
// `pool_size` scored candidates (ranking order) for lookahead eviction.
struct Selection {
  TokenSet critical;
  TokenSet pinned;
  std::vector<ScoredToken> pool;

  TokenSet tokens() const { return set_union(critical, pinned); }
};

struct SelectOptions {
  // Centroids are visited until their chunks hold >= fanout * budget_k tokens.
  double fanout = 4.0;
  std::size_t pool_size = 0;  // 0 = budget_k
};

Selection select_critical(const HierIndex& index, const Matrix& keys, std::span<const float> query,
                          const SparsityConfig& cfg, const SelectOptions& options = {});

// Exact oracle in the same result shape.
Selection select_exact(const Matrix& keys, std::span<const float> query, const SparsityConfig& cfg,
                       std::size_t pool_size = 0);

// Channel-wise min/max chunk bounds (comparison baseline).
struct MinMaxChunk {
  TokenIndex begin = 0;
  TokenIndex end = 0;
  std::vector<float> min;
  std::vector<float> max;
};

struct MinMaxIndex {
  std::vector<MinMaxChunk> chunks;
  std::size_t chunk_size = 1;
  std::size_t representative_count() const { return 2 * chunks.size(); }
};

MinMaxIndex build_minmax_index(const Matrix& keys, std::size_t chunk_size);
float minmax_bound(const MinMaxChunk& chunk, std::span<const float> query);
Selection select_minmax(const MinMaxIndex& index, const Matrix& keys, std::span<const float> query,
                        const SparsityConfig& cfg);

// Token-level k-means (similarity grouping without spatial chunking).
struct FlatIndex {
  Matrix centers;
  std::vector<std::vector<TokenIndex>> members;
  std::size_t representative_count() const { return centers.rows(); }
};

FlatIndex build_flat_index(const Matrix& keys, std::size_t n_clusters, std::uint64_t seed,
                           const KMeansOptions& options = {});
Selection select_flat(const FlatIndex& index, const Matrix& keys, std::span<const float> query,
                      const SparsityConfig& cfg);

double recall(const TokenSet& selected, const TokenSet& exact);

// "KVIX" section: chunk table and centroid table, little-endian f32 vectors.
void write_index(std::ostream& os, const HierIndex& index);
HierIndex read_index(std::istream& is);

}  // namespace kvdrive
