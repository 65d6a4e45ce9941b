#include <algorithm>
#include <cmath>

#include "kvdrive/rng.hpp"
#include "kvdrive/workload.hpp"

namespace kvdrive {

double TraceSpec::persistence_for(std::size_t stream) const {
  return persistence_overrides.empty() ? persistence : persistence_overrides.at(stream);
}

void TraceSpec::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidArgument, "invalid trace spec: " + what);
  };
  check(layers >= 1 && heads >= 1 && dim >= 1, "layers, heads and dim must be >= 1");
  check(context_length >= 1 && steps >= 1, "context_length and steps must be >= 1");
  check(cluster_count >= 1 && cluster_count <= context_length, "cluster_count must be in [1, n]");
  check(persistence >= 0.0 && persistence <= 1.0, "persistence must be in [0, 1]");
  check(persistence_overrides.empty() || persistence_overrides.size() == stream_count(),
        "persistence_overrides must have one entry per (layer, head)");
  for (double a : persistence_overrides) check(a >= 0.0 && a <= 1.0, "override outside [0, 1]");
  check(cluster_spread >= 0.0 && drift_scale >= 0.0 && jitter_scale >= 0.0,
        "scales must be non-negative");
  check(key_smoothness >= 0.0 && key_smoothness < 1.0, "key_smoothness must be in [0, 1)");
  check(jitter_rho >= 0.0 && jitter_rho < 1.0, "jitter_rho must be in [0, 1)");
  check(segment_mean >= 1.0, "segment_mean must be >= 1");
}

DecodingTrace::DecodingTrace(TraceSpec spec) : spec_(std::move(spec)) {
  const std::size_t streams = spec_.stream_count();
  keys_.assign(streams, Matrix(spec_.context_length, spec_.dim));
  values_.assign(streams, Matrix(spec_.context_length, spec_.dim));
  queries_.assign(streams, Matrix(spec_.obs_window + spec_.steps, spec_.dim));
}

KVEntry DecodingTrace::entry(std::size_t stream, TokenIndex token) const {
  const auto k = keys(stream).row(token);
  const auto v = values(stream).row(token);
  return {token, {k.begin(), k.end()}, {v.begin(), v.end()}};
}

namespace {

void fill_normal(CounterRng& rng, std::span<double> out) {
  for (double& x : out) x = rng.normal();
}

void normalize(std::span<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

void store(std::span<const double> src, std::span<float> dst) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
}

void generate_keys(const TraceSpec& spec, CounterRng& rng, Matrix& keys, Matrix& values) {
  const std::size_t d = spec.dim;
  std::vector<std::vector<double>> centers(spec.cluster_count, std::vector<double>(d));
  for (auto& c : centers) {
    fill_normal(rng, c);
    normalize(c);
  }
  const double rho = spec.key_smoothness;
  const double innovation = std::sqrt(1.0 - rho * rho);
  const double noise_scale = spec.cluster_spread / std::sqrt(static_cast<double>(d));
  std::vector<double> z(d), g(d), k(d);
  fill_normal(rng, z);

  const double p = 1.0 / spec.segment_mean;
  std::size_t token = 0;
  while (token < spec.context_length) {
    // 1 + geometric(p) run length, mean segment_mean.
    std::size_t run = 1;
    if (p < 1.0) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      run += static_cast<std::size_t>(std::floor(std::log(u) / std::log1p(-p)));
    }
    const auto& center = centers[rng.below(centers.size())];
    const std::size_t end = std::min<std::size_t>(spec.context_length, token + run);
    for (; token < end; ++token) {
      fill_normal(rng, g);
      for (std::size_t i = 0; i < d; ++i) {
        z[i] = rho * z[i] + innovation * g[i];
        k[i] = center[i] + noise_scale * z[i];
      }
      normalize(k);
      store(k, keys.row(token));
      fill_normal(rng, g);
      normalize(g);
      store(g, values.row(token));
    }
  }
}

void generate_queries(const TraceSpec& spec, double alpha, CounterRng& rng, Matrix& queries) {
  const std::size_t d = spec.dim;
  std::vector<double> q(d), jitter(d), e(d), out(d);
  fill_normal(rng, q);
  normalize(q);
  fill_normal(rng, jitter);
  normalize(jitter);
  const double jitter_corr = alpha * spec.jitter_rho;
  const double jitter_innovation = std::sqrt(1.0 - jitter_corr * jitter_corr);
  const double jitter_size = (1.0 - alpha) * spec.jitter_scale;
  const double drift_size = (1.0 - alpha) * spec.drift_scale;

  for (std::size_t t = 0; t < queries.rows(); ++t) {
    if (jitter_size == 0.0) {
      out = q;
    } else {
      for (std::size_t i = 0; i < d; ++i) out[i] = q[i] + jitter_size * jitter[i];
      normalize(out);
    }
    store(out, queries.row(t));

    fill_normal(rng, e);
    normalize(e);
    for (std::size_t i = 0; i < d; ++i) jitter[i] = jitter_corr * jitter[i] + jitter_innovation * e[i];
    normalize(jitter);

    fill_normal(rng, e);
    normalize(e);
    if (alpha < 1.0) {
      for (std::size_t i = 0; i < d; ++i) q[i] = alpha * q[i] + drift_size * e[i];
      normalize(q);
    }
  }
}

}  // namespace

DecodingTrace generate(const TraceSpec& spec) {
  spec.validate();
  DecodingTrace trace(spec);
  for (std::size_t s = 0; s < spec.stream_count(); ++s) {
    const LayerHeadId id = stream_id(s, spec.heads);
    const std::uint64_t stream_seed =
        hash_combine(spec.seed, (static_cast<std::uint64_t>(id.layer) << 32) | id.head);
    CounterRng key_rng(hash_combine(stream_seed, 1));
    CounterRng query_rng(hash_combine(stream_seed, 2));
    generate_keys(spec, key_rng, trace.keys(s), trace.values(s));
    generate_queries(spec, spec.persistence_for(s), query_rng, trace.query_matrix(s));
  }
  return trace;
}

double mean_topk_overlap(const DecodingTrace& trace, std::size_t m, std::size_t k,
                         std::size_t stream_limit) {
  const std::size_t streams =
      stream_limit == 0 ? trace.stream_count() : std::min(stream_limit, trace.stream_count());
  double total = 0.0;
  std::size_t pairs = 0;
  const TokenSet none;
  for (std::size_t s = 0; s < streams; ++s) {
    TokenSet prev_m;
    for (std::size_t t = 0; t < trace.steps(); ++t) {
      const Scores scores = dot_scores(trace.query(t, s), trace.keys(s));
      const TokenSet top_k = exact_topk(scores, k, none);
      if (t > 0) {
        total += static_cast<double>(set_intersection(prev_m, top_k).size()) / static_cast<double>(k);
        ++pairs;
      }
      prev_m = m == k ? top_k : exact_topk(scores, m, none);
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

}  // namespace kvdrive
