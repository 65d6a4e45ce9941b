#include <fstream>

#include "kvdrive/binary_io.hpp"
#include "kvdrive/rng.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive {

// Layout:
//   "KVTR" u32 version u32 rng_algorithm
//   u32 layers heads dim context_length steps obs_window cluster_count
//   f64 persistence cluster_spread key_smoothness segment_mean drift_scale
//       jitter_scale jitter_rho
//   u64 seed  u32 override_count  f64[override_count]
//   prefix  (layer, head, token): f32 key[dim], f32 value[dim]
//   obs     (obs, layer, head):   f32 query[dim]
//   steps   (step, layer, head):  f32 query[dim]

void write_trace(const std::filesystem::path& path, const DecodingTrace& trace) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  BinaryWriter w(os);
  const TraceSpec& spec = trace.spec();
  w.put_magic("KVTR");
  w.put<std::uint32_t>(kTraceFormatVersion);
  w.put<std::uint32_t>(kRngAlgorithmSplitMix64);
  for (std::uint32_t v : {spec.layers, spec.heads, spec.dim, spec.context_length, spec.steps,
                          spec.obs_window, spec.cluster_count}) {
    w.put(v);
  }
  for (double v : {spec.persistence, spec.cluster_spread, spec.key_smoothness, spec.segment_mean,
                   spec.drift_scale, spec.jitter_scale, spec.jitter_rho}) {
    w.put(v);
  }
  w.put<std::uint64_t>(spec.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.persistence_overrides.size()));
  for (double v : spec.persistence_overrides) w.put(v);

  const std::size_t streams = trace.stream_count();
  for (std::size_t s = 0; s < streams; ++s) {
    for (std::size_t t = 0; t < spec.context_length; ++t) {
      w.put_floats(trace.keys(s).row(t));
      w.put_floats(trace.values(s).row(t));
    }
  }
  for (std::size_t o = 0; o < spec.obs_window; ++o) {
    for (std::size_t s = 0; s < streams; ++s) w.put_floats(trace.obs_query(o, s));
  }
  for (std::size_t t = 0; t < spec.steps; ++t) {
    for (std::size_t s = 0; s < streams; ++s) w.put_floats(trace.query(t, s));
  }
  os.flush();
  w.check();
}

DecodingTrace read_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open " + path.string());
  BinaryReader r(is, "trace " + path.string());
  r.expect_magic("KVTR");
  const auto version = r.get<std::uint32_t>();
  require(version == kTraceFormatVersion, ErrorCode::kFormat,
          "unsupported trace version " + std::to_string(version));
  const auto rng = r.get<std::uint32_t>();
  require(rng == kRngAlgorithmSplitMix64, ErrorCode::kFormat,
          "unknown generator algorithm " + std::to_string(rng));

  TraceSpec spec;
  spec.layers = r.get<std::uint32_t>();
  spec.heads = r.get<std::uint32_t>();
  spec.dim = r.get<std::uint32_t>();
  spec.context_length = r.get<std::uint32_t>();
  spec.steps = r.get<std::uint32_t>();
  spec.obs_window = r.get<std::uint32_t>();
  spec.cluster_count = r.get<std::uint32_t>();
  spec.persistence = r.get<double>();
  spec.cluster_spread = r.get<double>();
  spec.key_smoothness = r.get<double>();
  spec.segment_mean = r.get<double>();
  spec.drift_scale = r.get<double>();
  spec.jitter_scale = r.get<double>();
  spec.jitter_rho = r.get<double>();
  spec.seed = r.get<std::uint64_t>();
  const auto overrides = r.get<std::uint32_t>();
  require(overrides <= (1u << 20), ErrorCode::kFormat, "implausible override count");
  for (std::uint32_t i = 0; i < overrides; ++i) spec.persistence_overrides.push_back(r.get<double>());
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("trace header: ") + e.what());
  }
  // Refuse headers describing more data than the file can hold before allocating.
  const auto file_size = std::filesystem::file_size(path);
  const std::uint64_t body = spec.stream_count() * 4ull * spec.dim *
                             (2ull * spec.context_length + spec.obs_window + spec.steps);
  require(r.consumed() + body <= file_size, ErrorCode::kFormat,
          "trace " + path.string() + ": truncated input");

  DecodingTrace trace(spec);
  const std::size_t streams = trace.stream_count();
  for (std::size_t s = 0; s < streams; ++s) {
    for (std::size_t t = 0; t < spec.context_length; ++t) {
      r.get_floats(trace.keys(s).row(t));
      r.get_floats(trace.values(s).row(t));
    }
  }
  for (std::size_t o = 0; o < spec.obs_window; ++o) {
    for (std::size_t s = 0; s < streams; ++s) r.get_floats(trace.query_matrix(s).row(o));
  }
  for (std::size_t t = 0; t < spec.steps; ++t) {
    for (std::size_t s = 0; s < streams; ++s) {
      r.get_floats(trace.query_matrix(s).row(spec.obs_window + t));
    }
  }
  return trace;
}

}  // namespace kvdrive
