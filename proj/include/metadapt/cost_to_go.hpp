#pragma once

// Shortest-path cost-to-go over a traversal-cost grid, queried by the
// controller as a terminal and running value term. Edges connect the 8
// neighbors; an edge costs the mean of the two cell costs times the metric
// step length, so doubling a cell's cost doubles the price of passing
// through it regardless of direction.

#include <optional>
#include <queue>
#include <utility>

#include "metadapt/grid.hpp"

namespace metadapt {

// Walls (infinite traversal cost) interpolate to this finite ceiling so the
// planner can still rank samples that brush against them.
inline constexpr double kWallValue = 1e6;

struct CostToGoField {
  Grid value;  // cost-to-go per cell, infinite where unreachable
  Grid track;  // the traversal-cost grid the field was built from
  int goal_r = 0;
  int goal_c = 0;

  double value_at(double x, double y) const {
    const double v = value.bilinear(x, y);
    return std::isfinite(v) ? v : kWallValue;
  }
};

// Dijkstra from the goal outward. Traversal costs are expected to be >= 1
// on passable cells and infinite on walls; the goal must be passable.
inline std::optional<CostToGoField> build_cost_to_go(const Grid& traversal,
                                                     int goal_r, int goal_c) {
  if (!traversal.inside_cell(goal_r, goal_c)) return std::nullopt;
  if (!std::isfinite(traversal.at(goal_r, goal_c))) return std::nullopt;

  CostToGoField field;
  field.track = traversal;
  field.goal_r = goal_r;
  field.goal_c = goal_c;
  field.value = Grid(traversal.rows, traversal.cols, traversal.cell,
                     traversal.ox, traversal.oy, kInf);

  using Item = std::pair<double, int>;  // (distance, flat index)
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  const auto idx = [&](int r, int c) { return r * traversal.cols + c; };
  field.value.at(goal_r, goal_c) = 0.0;
  heap.push({0.0, idx(goal_r, goal_c)});

  while (!heap.empty()) {
    const auto [d, flat] = heap.top();
    heap.pop();
    const int r = flat / traversal.cols;
    const int c = flat % traversal.cols;
    if (d > field.value.at(r, c)) continue;  // stale entry
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const int nr = r + dr;
        const int nc = c + dc;
        if (!traversal.inside_cell(nr, nc)) continue;
        const double tc = traversal.at(nr, nc);
        if (!std::isfinite(tc)) continue;
        const double step = traversal.cell * std::hypot(double(dr), double(dc));
        const double nd = d + 0.5 * (traversal.at(r, c) + tc) * step;
        if (nd < field.value.at(nr, nc)) {
          field.value.at(nr, nc) = nd;
          heap.push({nd, idx(nr, nc)});
        }
      }
    }
  }
  return field;
}

}  // namespace metadapt
