#include "kvdrive/workload.hpp"

namespace kvdrive {

std::vector<WorkloadPreset> standard_workloads() {
  struct Family {
    const char* name;
    double persistence;
    bool hetero;
  };
  const Family families[] = {
      {"locality-high", 0.9, false},
      {"locality-none", 0.0, false},
      {"hetero", 0.9, true},
  };
  struct Budget {
    const char* label;
    std::size_t divisor;  // 1/64 = 1.5625%, 1/16 = 6.25%
  };
  const Budget budgets[] = {{"1.56", 64}, {"6.25", 16}};

  std::vector<WorkloadPreset> out;
  for (const auto& f : families) {
    for (std::uint32_t n : {4096u, 16384u, 65536u}) {
      for (const auto& b : budgets) {
        WorkloadPreset p;
        p.family = f.name;
        p.name = std::string(f.name) + "/n" + std::to_string(n) + "/b" + b.label;
        p.spec.context_length = n;
        p.spec.steps = n >= 65536 ? 32 : 64;
        p.spec.persistence = f.persistence;
        if (f.hetero) {
          // Head 0 of every layer is persistent, head 1 barely is.
          p.spec.persistence_overrides.resize(p.spec.stream_count());
          for (std::size_t s = 0; s < p.spec.stream_count(); ++s) {
            p.spec.persistence_overrides[s] = s % p.spec.heads == 0 ? 0.95 : 0.3;
          }
        }
        p.sparsity.budget_k = n / b.divisor;
        p.sparsity.sink_count = 4;
        p.sparsity.local_count = 64;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

WorkloadPreset find_preset(const std::string& name) {
  for (auto& p : standard_workloads()) {
    if (p.name == name) return p;
  }
  fail(ErrorCode::kNotFound, "unknown workload preset '" + name + "'");
}

}  // namespace kvdrive
