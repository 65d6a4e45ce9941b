#include <cmath>
#include <limits>

#include "kvdrive/pipeline.hpp"

namespace kvdrive {

const char* to_string(ComputeSite s) {
  return s == ComputeSite::kComputeNear ? "ComputeNear" : "ComputeFar";
}

RooflineDecision roofline_placement(double hit_rate, const RooflineModel& model) {
  require(hit_rate >= 0.0 && hit_rate <= 1.0, ErrorCode::kInvalidArgument, "hit_rate must be in [0, 1]");
  require(model.bytes_per_token_miss > 0.0 && model.flops_per_token > 0.0 && model.cpu_flops > 0.0 &&
              model.gpu_flops > 0.0 && model.link_bw > 0.0,
          ErrorCode::kInvalidArgument, "roofline rates must be positive");
  RooflineDecision d;
  const double moved = (1.0 - hit_rate) * model.bytes_per_token_miss;
  d.intensity = moved > 0.0 ? model.flops_per_token / moved : std::numeric_limits<double>::infinity();
  d.gpu_attainable = std::min(model.gpu_flops, d.intensity * model.link_bw);
  d.site = d.gpu_attainable > model.cpu_flops ? ComputeSite::kComputeFar : ComputeSite::kComputeNear;
  return d;
}

}  // namespace kvdrive
