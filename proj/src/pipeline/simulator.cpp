#include <algorithm>
#include <cmath>
#include <sstream>

#include "kvdrive/pipeline.hpp"

namespace kvdrive {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kSelect: return "select";
    case Stage::kHitMiss: return "hitmiss";
    case Stage::kFetch: return "fetch";
    case Stage::kCompute: return "compute";
    case Stage::kMeta: return "meta";
  }
  return "?";
}

const char* to_string(Resource r) {
  switch (r) {
    case Resource::kGpu: return "GPU";
    case Resource::kCpu: return "CPU";
    case Resource::kIo: return "IO";
  }
  return "?";
}

Resource resource_of(Stage s) {
  switch (s) {
    case Stage::kSelect:
    case Stage::kCompute: return Resource::kGpu;
    case Stage::kHitMiss:
    case Stage::kMeta: return Resource::kCpu;
    case Stage::kFetch: return Resource::kIo;
  }
  return Resource::kGpu;
}

StageCosts StageCosts::uniform(std::size_t m, double t_select, double t_hitmiss, double t_fetch,
                               double t_compute, double t_meta) {
  StageCosts c;
  c.select.assign(m, t_select);
  c.hitmiss.assign(m, t_hitmiss);
  c.fetch.assign(m, t_fetch);
  c.compute = t_compute;
  c.meta = t_meta;
  return c;
}

void StageCosts::validate() const {
  require(!select.empty(), ErrorCode::kInvalidArgument, "need at least one micro-batch");
  require(hitmiss.size() == select.size() && fetch.size() == select.size(),
          ErrorCode::kInvalidArgument, "stage cost vectors differ in length");
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(std::all_of(select.begin(), select.end(), ok) &&
              std::all_of(hitmiss.begin(), hitmiss.end(), ok) &&
              std::all_of(fetch.begin(), fetch.end(), ok) && ok(compute) && ok(meta),
          ErrorCode::kInvalidArgument, "stage costs must be finite and >= 0");
}

namespace {

void add(PipelineSchedule& s, Stage stage, int mb, double start, double duration) {
  s.events.push_back({stage, mb, resource_of(stage), start, start + duration});
}

void finish(PipelineSchedule& s) {
  s.makespan_s = 0.0;
  for (const auto& e : s.events) s.makespan_s = std::max(s.makespan_s, e.end_s);
  for (int r = 0; r < 3; ++r) {
    std::vector<const ScheduleEvent*> on;
    for (const auto& e : s.events) {
      if (static_cast<int>(e.resource) == r) on.push_back(&e);
    }
    std::sort(on.begin(), on.end(),
              [](const ScheduleEvent* a, const ScheduleEvent* b) { return a->start_s < b->start_s; });
    double stall = 0.0;
    for (std::size_t i = 1; i < on.size(); ++i) stall += std::max(0.0, on[i]->start_s - on[i - 1]->end_s);
    s.stall_s[r] = stall;
  }
}

}  // namespace

PipelineSchedule simulate_sequential(const StageCosts& costs) {
  costs.validate();
  PipelineSchedule s;
  double t = 0.0;
  for (std::size_t i = 0; i < costs.micro_batches(); ++i) {
    const int mb = static_cast<int>(i);
    add(s, Stage::kSelect, mb, t, costs.select[i]);
    t += costs.select[i];
    add(s, Stage::kHitMiss, mb, t, costs.hitmiss[i]);
    t += costs.hitmiss[i];
    add(s, Stage::kFetch, mb, t, costs.fetch[i]);
    t += costs.fetch[i];
  }
  add(s, Stage::kCompute, -1, t, costs.compute);
  t += costs.compute;
  add(s, Stage::kMeta, -1, t, costs.meta);
  finish(s);
  return s;
}

PipelineSchedule simulate_sfc(const StageCosts& costs) {
  costs.validate();
  const std::size_t m = costs.micro_batches();
  // A single micro-batch has nothing to overlap with.
  if (m == 1) return simulate_sequential(costs);

  PipelineSchedule s;
  double gpu = 0.0;
  double cpu = 0.0;
  double io = 0.0;
  std::vector<double> fetch_end(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const int mb = static_cast<int>(i);
    const double gate = i >= kOverlapDepth ? fetch_end[i - kOverlapDepth] : 0.0;
    const double sel = std::max(gpu, gate);
    add(s, Stage::kSelect, mb, sel, costs.select[i]);
    gpu = sel + costs.select[i];
    const double hm = std::max(cpu, gpu);
    add(s, Stage::kHitMiss, mb, hm, costs.hitmiss[i]);
    cpu = hm + costs.hitmiss[i];
    const double f = std::max(io, cpu);
    add(s, Stage::kFetch, mb, f, costs.fetch[i]);
    io = f + costs.fetch[i];
    fetch_end[i] = io;
  }
  const double compute = std::max(gpu, io);
  add(s, Stage::kCompute, -1, compute, costs.compute);
  add(s, Stage::kMeta, -1, std::max(compute, cpu), costs.meta);
  finish(s);
  return s;
}

std::string check_schedule(const PipelineSchedule& schedule, const StageCosts& costs) {
  const std::size_t m = costs.micro_batches();
  const double eps = 1e-9 * std::max(1.0, schedule.makespan_s);
  std::ostringstream err;
  std::vector<std::vector<const ScheduleEvent*>> by_stage(5, std::vector<const ScheduleEvent*>(m + 1));
  for (const auto& e : schedule.events) {
    if (e.resource != resource_of(e.stage)) return std::string("stage on wrong resource: ") + to_string(e.stage);
    const std::size_t slot = e.micro_batch < 0 ? m : static_cast<std::size_t>(e.micro_batch);
    if (slot > m) return "micro-batch index out of range";
    auto& cell = by_stage[static_cast<int>(e.stage)][slot];
    if (cell != nullptr) return std::string("duplicate event for ") + to_string(e.stage);
    cell = &e;
  }
  auto expect = [&](Stage st, std::size_t slot, double duration) -> const ScheduleEvent* {
    const ScheduleEvent* e = by_stage[static_cast<int>(st)][slot];
    if (e == nullptr || std::fabs((e->end_s - e->start_s) - duration) > eps || e->start_s < -eps) {
      err << "missing or mis-sized " << to_string(st) << " event for micro-batch " << slot;
      return nullptr;
    }
    return e;
  };
  double last_fetch = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto* sel = expect(Stage::kSelect, i, costs.select[i]);
    const auto* hm = expect(Stage::kHitMiss, i, costs.hitmiss[i]);
    const auto* f = expect(Stage::kFetch, i, costs.fetch[i]);
    if (sel == nullptr || hm == nullptr || f == nullptr) return err.str();
    if (sel->end_s > hm->start_s + eps || hm->end_s > f->start_s + eps) {
      return "precedence select -> hitmiss -> fetch violated at micro-batch " + std::to_string(i);
    }
    last_fetch = std::max(last_fetch, f->end_s);
  }
  const auto* compute = expect(Stage::kCompute, m, costs.compute);
  const auto* meta = expect(Stage::kMeta, m, costs.meta);
  if (compute == nullptr || meta == nullptr) return err.str();
  if (compute->start_s + eps < last_fetch) return "compute started before the last fetch completed";
  if (meta->start_s + eps < compute->start_s) return "meta started before compute";

  for (int r = 0; r < 3; ++r) {
    std::vector<const ScheduleEvent*> on;
    for (const auto& e : schedule.events) {
      if (static_cast<int>(e.resource) == r && e.end_s > e.start_s) on.push_back(&e);
    }
    std::sort(on.begin(), on.end(),
              [](const ScheduleEvent* a, const ScheduleEvent* b) { return a->start_s < b->start_s; });
    for (std::size_t i = 1; i < on.size(); ++i) {
      if (on[i]->start_s + eps < on[i - 1]->end_s) {
        return std::string("overlapping events on ") + to_string(static_cast<Resource>(r));
      }
    }
  }
  double end = 0.0;
  for (const auto& e : schedule.events) end = std::max(end, e.end_s);
  if (std::fabs(end - schedule.makespan_s) > eps) return "makespan disagrees with the events";
  return {};
}

CsvSchema schedule_schema() {
  return {{"stage", ColumnType::kText},
          {"micro_batch", ColumnType::kInteger},
          {"resource", ColumnType::kText},
          {"start_s", ColumnType::kReal},
          {"end_s", ColumnType::kReal}};
}

void append_csv(CsvTable& table, const PipelineSchedule& schedule) {
  for (const auto& e : schedule.events) {
    table.row() << to_string(e.stage) << e.micro_batch << to_string(e.resource) << e.start_s
                << e.end_s;
  }
}

}  // namespace kvdrive
