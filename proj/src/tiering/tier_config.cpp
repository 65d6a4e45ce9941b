#include <json.hpp>

#include "kvdrive/tiering.hpp"

namespace kvdrive {

const char* to_string(Tier tier) {
  switch (tier) {
    case Tier::kFast: return "Fast";
    case Tier::kRam: return "Ram";
    case Tier::kDisk: return "Disk";
  }
  return "?";
}

const TierSpec& TierConfig::operator[](Tier t) const {
  switch (t) {
    case Tier::kFast: return fast;
    case Tier::kRam: return ram;
    case Tier::kDisk: return disk;
  }
  return disk;
}

void TierConfig::validate() const {
  for (const TierSpec* t : {&fast, &ram, &disk}) {
    require(t->bandwidth_bytes_per_s > 0.0 && t->latency_s >= 0.0, ErrorCode::kInvalidArgument,
            std::string("tier ") + to_string(t->name) + " needs positive bandwidth");
  }
  require(disk.capacity_bytes > 0, ErrorCode::kInvalidArgument, "disk capacity must be positive");
  require(fast.bandwidth_bytes_per_s > ram.bandwidth_bytes_per_s &&
              ram.bandwidth_bytes_per_s > disk.bandwidth_bytes_per_s,
          ErrorCode::kInvalidArgument, "tiers must get slower from Fast to Disk");
  require(fast.latency_s <= ram.latency_s && ram.latency_s <= disk.latency_s,
          ErrorCode::kInvalidArgument, "tier latencies must not decrease from Fast to Disk");
}

namespace {

void read_tier(const nlohmann::json& j, TierSpec& t) {
  for (const auto& [key, value] : j.items()) {
    if (key == "capacity_bytes") {
      t.capacity_bytes = value.get<std::uint64_t>();
    } else if (key == "bandwidth_bytes_per_s") {
      t.bandwidth_bytes_per_s = value.get<double>();
    } else if (key == "latency_s") {
      t.latency_s = value.get<double>();
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown tier field '" + key + "'");
    }
  }
}

nlohmann::json tier_json(const TierSpec& t) {
  return {{"capacity_bytes", t.capacity_bytes},
          {"bandwidth_bytes_per_s", t.bandwidth_bytes_per_s},
          {"latency_s", t.latency_s}};
}

}  // namespace

TierConfig parse_tier_config(std::string_view json_text) {
  TierConfig cfg;
  try {
    const auto j = nlohmann::json::parse(json_text);
    require(j.is_object(), ErrorCode::kInvalidArgument, "tier config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "fast") {
        read_tier(value, cfg.fast);
      } else if (key == "ram") {
        read_tier(value, cfg.ram);
      } else if (key == "disk") {
        read_tier(value, cfg.disk);
      } else {
        fail(ErrorCode::kInvalidArgument, "unknown tier '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("tier config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string tier_config_json(const TierConfig& cfg) {
  const nlohmann::json j = {
      {"fast", tier_json(cfg.fast)}, {"ram", tier_json(cfg.ram)}, {"disk", tier_json(cfg.disk)}};
  return j.dump(2);
}

}  // namespace kvdrive
