#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <set>

#include "commands.hpp"
#include "kvdrive/error.hpp"

using nlohmann::json;
using namespace kvdrive;
using namespace kvdrive::cli;

namespace {

std::string dashed(std::string key) {
  for (char& ch : key) {
    if (ch == '_') ch = '-';
  }
  return key;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must hold a JSON object");
  return j;
}

// Flag beats config beats default.
template <typename T>
T resolve(const CLI::App& app, const json& config, const T& flags) {
  json merged = T{};
  const json given = flags;
  for (auto it = merged.begin(); it != merged.end(); ++it) {
    if (config.contains(it.key())) *it = config[it.key()];
    const CLI::Option* opt = app.get_option_no_throw("--" + dashed(it.key()));
    if (opt != nullptr && opt->count() > 0) *it = given[it.key()];
  }
  try {
    return merged.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad setting type: ") + e.what());
  }
}

template <typename... Settings>
void reject_unknown_keys(const json& config) {
  std::set<std::string> known{"config"};
  (
      [&] {
        const json defaults = Settings{};
        for (auto it = defaults.begin(); it != defaults.end(); ++it) known.insert(it.key());
      }(),
      ...);
  for (auto it = config.begin(); it != config.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << text;
}

std::string sibling(const std::string& out, const std::string& configured, const std::string& suffix) {
  if (!configured.empty()) return configured;
  return out == "-" ? std::string() : out + suffix;
}

void add_common(CLI::App* sub, CommonSettings& c, std::string& config_path) {
  sub->add_option("--trace", c.trace, "Trace file (KVTR) instead of a preset");
  sub->add_option("--preset", c.preset, "Workload preset, e.g. locality-high/n16384/b6.25");
  sub->add_option("--seeds", c.seeds, "Comma-separated seed list")->delimiter(',');
  sub->add_option("--out", c.out, "Output path ('-' for stdout)");
  sub->add_option("--config", config_path, "JSON settings file");
  sub->add_option("--steps", c.steps, "Decode steps (0 = preset default)");
  sub->add_option("--budget", c.budget, "Sparsity budget as a fraction of the context");
  sub->add_option("--selection", c.selection, "exact | index (default depends on the subcommand)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kvdrive: sparse KV-cache offloading experiments"};
  app.require_subcommand(1);

  CommonSettings common_flags;
  std::string config_path;
  IndexBenchSettings index_flags;
  CacheBenchSettings cache_flags;
  AllocSettings alloc_flags;
  TierBenchSettings tier_flags;
  PipelineSettings pipe_flags;
  E2eSettings e2e_flags;

  auto* index_cmd = app.add_subcommand("index-bench", "Recall and selection time of index variants");
  add_common(index_cmd, common_flags, config_path);
  index_cmd->add_option("--centroids", index_flags.centroids)->delimiter(',');
  index_cmd->add_option("--variants", index_flags.variants)->delimiter(',');
  index_cmd->add_option("--chunk-size", index_flags.chunk_size);
  index_cmd->add_option("--fanout", index_flags.fanout);

  auto* cache_cmd = app.add_subcommand("cache-bench", "Hit rate and fetch bytes per policy and window");
  add_common(cache_cmd, common_flags, config_path);
  cache_cmd->add_option("--windows", cache_flags.windows)->delimiter(',');
  cache_cmd->add_option("--policies", cache_flags.policies)->delimiter(',');
  cache_cmd->add_option("--pool-factor", cache_flags.pool_factor);
  cache_cmd->add_option("--decay", cache_flags.decay);
  cache_cmd->add_option("--from-step", cache_flags.from_step);

  auto* alloc_cmd = app.add_subcommand("alloc", "Uniform vs per-head window allocation at equal memory");
  add_common(alloc_cmd, common_flags, config_path);
  alloc_cmd->add_option("--windows", alloc_flags.windows)->delimiter(',');
  alloc_cmd->add_option("--uniform-windows", alloc_flags.uniform_windows)->delimiter(',');
  alloc_cmd->add_option("--decay", alloc_flags.decay);

  auto* tier_cmd = app.add_subcommand("tier-bench", "Fetch strategies over the tiered store");
  add_common(tier_cmd, common_flags, config_path);
  tier_cmd->add_option("--strategies", tier_flags.strategies)->delimiter(',');
  tier_cmd->add_option("--layout", tier_flags.layout);
  tier_cmd->add_option("--requests", tier_flags.requests);
  tier_cmd->add_option("--micro-batches", tier_flags.micro_batches);
  tier_cmd->add_option("--pool-bytes", tier_flags.pool_bytes);
  tier_cmd->add_option("--pace-io", tier_flags.pace_io);
  tier_cmd->add_option("--store", tier_flags.store);
  tier_cmd->add_option("--tiers", tier_flags.tiers);
  tier_cmd->add_option("--consume-time-s", tier_flags.consume_time_s);

  auto* pipe_cmd = app.add_subcommand("pipeline", "Sequential vs pipelined schedules and the tuner");
  add_common(pipe_cmd, common_flags, config_path);
  pipe_cmd->add_option("--micro-batches", pipe_flags.micro_batches)->delimiter(',');
  pipe_cmd->add_option("--mixes", pipe_flags.mixes)->delimiter(',');
  pipe_cmd->add_option("--unit-s", pipe_flags.unit_s);
  pipe_cmd->add_option("--tune", pipe_flags.tune);
  pipe_cmd->add_option("--tune-centroids", pipe_flags.tune_centroids)->delimiter(',');
  pipe_cmd->add_option("--tune-cache-bytes", pipe_flags.tune_cache_bytes)->delimiter(',');
  pipe_cmd->add_option("--tune-micro-batches", pipe_flags.tune_micro_batches)->delimiter(',');
  pipe_cmd->add_option("--tune-tolerance-s", pipe_flags.tune_tolerance_s);
  pipe_cmd->add_option("--prerun-steps", pipe_flags.prerun_steps);
  pipe_cmd->add_option("--compute-time-s", pipe_flags.compute_time_s);
  pipe_cmd->add_option("--tune-out", pipe_flags.tune_out);
  pipe_cmd->add_option("--gantt-out", pipe_flags.gantt_out);
  pipe_cmd->add_option("--gantt-mix", pipe_flags.gantt_mix);
  pipe_cmd->add_option("--gantt-m", pipe_flags.gantt_m);

  auto* e2e_cmd = app.add_subcommand("e2e", "Index, warm-up, store and pipelined executor end to end");
  add_common(e2e_cmd, common_flags, config_path);
  e2e_cmd->add_option("--micro-batches", e2e_flags.micro_batches);
  e2e_cmd->add_option("--window-mult", e2e_flags.window_mult);
  e2e_cmd->add_option("--policy", e2e_flags.policy);
  e2e_cmd->add_option("--strategy", e2e_flags.strategy);
  e2e_cmd->add_option("--layout", e2e_flags.layout);
  e2e_cmd->add_option("--compute-time-s", e2e_flags.compute_time_s);
  e2e_cmd->add_option("--warmup", e2e_flags.warmup);
  e2e_cmd->add_option("--pace-io", e2e_flags.pace_io);
  e2e_cmd->add_option("--store", e2e_flags.store);
  e2e_cmd->add_option("--report", e2e_flags.report);
  e2e_cmd->add_option("--tiers", e2e_flags.tiers);
  e2e_cmd->add_option("--fast-fraction", e2e_flags.fast_fraction);
  e2e_cmd->add_option("--ram-fraction", e2e_flags.ram_fraction);

  auto* gen_cmd = app.add_subcommand("gen-trace", "Write preset traces to disk");
  add_common(gen_cmd, common_flags, config_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    const json config = load_config(config_path);
    const CommonSettings common = resolve(*sub, config, common_flags);
    json resolved{{"subcommand", name}, {"common", common}};
    std::string csv;

    if (name == "index-bench") {
      reject_unknown_keys<CommonSettings, IndexBenchSettings>(config);
      const auto s = resolve(*sub, config, index_flags);
      resolved["settings"] = s;
      csv = index_bench(common, s).str(fnv1a(resolved.dump()));
    } else if (name == "cache-bench") {
      reject_unknown_keys<CommonSettings, CacheBenchSettings>(config);
      const auto s = resolve(*sub, config, cache_flags);
      resolved["settings"] = s;
      csv = cache_bench(common, s).str(fnv1a(resolved.dump()));
    } else if (name == "alloc") {
      reject_unknown_keys<CommonSettings, AllocSettings>(config);
      const auto s = resolve(*sub, config, alloc_flags);
      resolved["settings"] = s;
      csv = alloc_bench(common, s).str(fnv1a(resolved.dump()));
    } else if (name == "tier-bench") {
      reject_unknown_keys<CommonSettings, TierBenchSettings>(config);
      const auto s = resolve(*sub, config, tier_flags);
      resolved["settings"] = s;
      csv = tier_bench(common, s).str(fnv1a(resolved.dump()));
    } else if (name == "pipeline") {
      reject_unknown_keys<CommonSettings, PipelineSettings>(config);
      const auto s = resolve(*sub, config, pipe_flags);
      resolved["settings"] = s;
      const std::uint64_t hash = fnv1a(resolved.dump());
      PipelineOutput out = pipeline_bench(common, s);
      csv = out.table.str(hash);
      if (!out.tune.is_null()) {
        const std::string path = sibling(common.out, s.tune_out, ".tune.json");
        if (path.empty()) {
          std::cerr << out.tune.dump(2) << '\n';
        } else {
          write_text(path, out.tune.dump(2) + "\n");
        }
      }
      if (!s.gantt_out.empty()) write_text(s.gantt_out, out.gantt.str(hash));
    } else if (name == "e2e") {
      reject_unknown_keys<CommonSettings, E2eSettings>(config);
      const auto s = resolve(*sub, config, e2e_flags);
      resolved["settings"] = s;
      E2eOutput out = e2e(common, s);
      csv = out.summary.str(fnv1a(resolved.dump()));
      const std::string path = sibling(common.out, s.report, ".report.json");
      if (!path.empty()) write_text(path, out.report.dump(2) + "\n");
    } else if (name == "gen-trace") {
      reject_unknown_keys<CommonSettings>(config);
      for (const auto& path : gen_trace(common)) std::cerr << "wrote " << path << '\n';
      return 0;
    }
    write_text(common.out, csv);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
