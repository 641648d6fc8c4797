#pragma once

// Training data layout: logged runs sliced into overlapping segments, each
// holding an adaptation stretch followed by a prediction stretch.

#include <vector>

#include "metadapt/vehicle_types.hpp"

namespace metadapt {

struct RunLog {
  int id = 0;
  std::vector<State> x;
  std::vector<Control> u;
  std::vector<TerrainSample> y;
};

// tau steps of adaptation data, then horizon steps of prediction targets;
// x/u/y all hold tau + horizon + 1 entries (the trailing control and
// terrain rows exist but are unused).
struct TrajectorySegment {
  int run_id = 0;
  int source_t = 0;  // index of the handoff instant within the source run
  int tau = 0;
  int horizon = 0;
  std::vector<State> x;
  std::vector<Control> u;
  std::vector<TerrainSample> y;
};

struct SliceConfig {
  int tau = 1000;
  int horizon = 250;
  int stride = 250;
};

// Segments never span run boundaries. Runs too short to yield a single
// segment are skipped and counted for the caller to report.
inline std::vector<TrajectorySegment> slice_dataset(const std::vector<RunLog>& runs,
                                                    const SliceConfig& cfg,
                                                    int* skipped_runs = nullptr) {
  const int len = cfg.tau + cfg.horizon + 1;
  std::vector<TrajectorySegment> segs;
  int skipped = 0;
  for (const auto& run : runs) {
    const int n = int(run.x.size());
    if (n < len) {
      ++skipped;
      continue;
    }
    for (int s = 0; s + len <= n; s += cfg.stride) {
      TrajectorySegment seg;
      seg.run_id = run.id;
      seg.source_t = s + cfg.tau;
      seg.tau = cfg.tau;
      seg.horizon = cfg.horizon;
      seg.x.assign(run.x.begin() + s, run.x.begin() + s + len);
      seg.u.assign(run.u.begin() + s, run.u.begin() + s + len);
      seg.y.assign(run.y.begin() + s, run.y.begin() + s + len);
      segs.push_back(std::move(seg));
    }
  }
  if (skipped_runs) *skipped_runs = skipped;
  return segs;
}

}  // namespace metadapt
