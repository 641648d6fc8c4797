#pragma once

// Row-major scalar field over a regular world-aligned grid. Cell (r, c) is
// centered at world (ox + c*cell, oy + r*cell); interpolation is defined on
// the convex hull of the cell centers.

#include <cmath>
#include <limits>
#include <vector>

namespace metadapt {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Grid {
  int rows = 0;
  int cols = 0;
  double cell = 1.0;  // meters per cell
  double ox = 0.0;    // world coordinates of the (0, 0) cell center
  double oy = 0.0;
  std::vector<double> v;

  Grid() = default;
  Grid(int rows_, int cols_, double cell_, double ox_ = 0.0, double oy_ = 0.0,
       double fill = 0.0)
      : rows(rows_), cols(cols_), cell(cell_), ox(ox_), oy(oy_),
        v(std::size_t(rows_) * cols_, fill) {}

  double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }

  bool inside_cell(int r, int c) const {
    return r >= 0 && r < rows && c >= 0 && c < cols;
  }
  // world point within the interpolation domain (the cell-center hull)
  bool inside_world(double x, double y) const {
    const double gx = (x - ox) / cell;
    const double gy = (y - oy) / cell;
    return gx >= 0.0 && gx <= cols - 1 && gy >= 0.0 && gy <= rows - 1;
  }

  // Bilinear interpolation with coordinates clamped onto the domain. An
  // infinite corner poisons the result only when its weight is nonzero.
  double bilinear(double x, double y) const {
    double gx = (x - ox) / cell;
    double gy = (y - oy) / cell;
    gx = std::min(std::max(gx, 0.0), double(cols - 1));
    gy = std::min(std::max(gy, 0.0), double(rows - 1));
    const int c0 = std::min(int(gx), cols - 2 >= 0 ? cols - 2 : 0);
    const int r0 = std::min(int(gy), rows - 2 >= 0 ? rows - 2 : 0);
    const double tx = gx - c0;
    const double ty = gy - r0;
    const int c1 = std::min(c0 + 1, cols - 1);
    const int r1 = std::min(r0 + 1, rows - 1);
    const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty,
                         tx * ty};
    const double s[4] = {at(r0, c0), at(r0, c1), at(r1, c0), at(r1, c1)};
    double out = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (w[k] == 0.0) continue;
      if (!std::isfinite(s[k])) return kInf;
      out += w[k] * s[k];
    }
    return out;
  }
};

}  // namespace metadapt
