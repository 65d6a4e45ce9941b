#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvdrive/core.hpp"

namespace kvdrive {

// Parameters of the synthetic decoding workload.
//
// Keys: each stream draws cluster_count unit centers; the token sequence is
// cut into runs (mean length segment_mean) that each follow one center, with
// a smooth AR(1) perturbation of relative size cluster_spread so neighbouring
// tokens stay similar.
//
// Queries: a drift state follows q' = normalize(a*q + (1-a)*drift_scale*e)
// with e a fresh unit Gaussian direction and a the persistence. The emitted
// query adds an observation jitter of size (1-a)*jitter_scale whose own
// autocorrelation is a*jitter_rho. a = 1 freezes the query, a = 0 gives
// i.i.d. uniform queries.
struct TraceSpec {
  std::uint32_t layers = 2;
  std::uint32_t heads = 2;
  std::uint32_t dim = 32;
  std::uint32_t context_length = 4096;
  std::uint32_t steps = 64;
  std::uint32_t obs_window = 16;
  std::uint32_t cluster_count = 64;
  double persistence = 0.9;
  double cluster_spread = 1.0;
  double key_smoothness = 0.9;
  double segment_mean = 16.0;
  double drift_scale = 0.5;
  double jitter_scale = 4.75;
  double jitter_rho = 0.5;
  // Optional per-stream persistence, (layer, head) order. Empty = uniform.
  std::vector<double> persistence_overrides;
  std::uint64_t seed = 1;

  std::size_t stream_count() const { return static_cast<std::size_t>(layers) * heads; }
  double persistence_for(std::size_t stream) const;
  void validate() const;

  bool operator==(const TraceSpec&) const = default;
};

// Per-stream prefix KV plus the query sequences. Queries are stored per
// stream as (obs_window + steps) x dim: the observation window (last prompt
// queries) comes first, decode steps follow.
class DecodingTrace {
 public:
  DecodingTrace() = default;
  explicit DecodingTrace(TraceSpec spec);

  const TraceSpec& spec() const noexcept { return spec_; }
  std::size_t stream_count() const noexcept { return keys_.size(); }
  std::size_t context_length() const noexcept { return spec_.context_length; }
  std::size_t dim() const noexcept { return spec_.dim; }
  std::size_t steps() const noexcept { return spec_.steps; }

  const Matrix& keys(std::size_t stream) const { return keys_.at(stream); }
  const Matrix& values(std::size_t stream) const { return values_.at(stream); }
  Matrix& keys(std::size_t stream) { return keys_.at(stream); }
  Matrix& values(std::size_t stream) { return values_.at(stream); }

  std::span<const float> query(std::size_t step, std::size_t stream) const {
    return queries_.at(stream).row(spec_.obs_window + step);
  }
  std::span<const float> obs_query(std::size_t i, std::size_t stream) const {
    return queries_.at(stream).row(i);
  }
  Matrix& query_matrix(std::size_t stream) { return queries_.at(stream); }
  const Matrix& query_matrix(std::size_t stream) const { return queries_.at(stream); }

  KVEntry entry(std::size_t stream, TokenIndex token) const;
  LayerHeadId stream_id(std::size_t stream) const { return kvdrive::stream_id(stream, spec_.heads); }

  bool operator==(const DecodingTrace&) const = default;

 private:
  TraceSpec spec_;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
  std::vector<Matrix> queries_;
};

DecodingTrace generate(const TraceSpec& spec);

// "KVTR" binary format, version 1.
inline constexpr std::uint32_t kTraceFormatVersion = 1;
void write_trace(const std::filesystem::path& path, const DecodingTrace& trace);
DecodingTrace read_trace(const std::filesystem::path& path);

struct WorkloadPreset {
  std::string name;    // e.g. "locality-high/n16384/b6.25"
  std::string family;  // locality-high | locality-none | hetero
  TraceSpec spec;
  SparsityConfig sparsity;
};

std::vector<WorkloadPreset> standard_workloads();
WorkloadPreset find_preset(const std::string& name);

// |A ∩ B| / |B| for the top-m set of one step against the top-k set of the next,
// averaged over consecutive step pairs and streams (exact selection).
double mean_topk_overlap(const DecodingTrace& trace, std::size_t m, std::size_t k,
                         std::size_t stream_limit = 0);

}  // namespace kvdrive
