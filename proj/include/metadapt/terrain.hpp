#pragma once

// Procedural worlds for the simulator: a smooth noise heightmap whose
// steepness is category-controlled, a heterogeneous friction field, and an
// obstacle cost grid. Everything is a pure function of (category, seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metadapt/grid.hpp"
#include "metadapt/vehicle_types.hpp"

namespace metadapt {

inline constexpr double kPi = 3.14159265358979323846;

enum class MapCategory {
  kShallowSparse,
  kShallowDense,
  kSteepSparse,
  kSteepDense,
};

inline const char* category_name(MapCategory c) {
  switch (c) {
    case MapCategory::kShallowSparse: return "shallow-sparse";
    case MapCategory::kShallowDense: return "shallow-dense";
    case MapCategory::kSteepSparse: return "steep-sparse";
    case MapCategory::kSteepDense: return "steep-dense";
  }
  return "unknown";
}

inline std::optional<MapCategory> parse_category(const std::string& s) {
  if (s == "shallow-sparse") return MapCategory::kShallowSparse;
  if (s == "shallow-dense") return MapCategory::kShallowDense;
  if (s == "steep-sparse") return MapCategory::kSteepSparse;
  if (s == "steep-dense") return MapCategory::kSteepDense;
  return std::nullopt;
}

inline bool category_steep(MapCategory c) {
  return c == MapCategory::kSteepSparse || c == MapCategory::kSteepDense;
}
inline bool category_dense(MapCategory c) {
  return c == MapCategory::kShallowDense || c == MapCategory::kSteepDense;
}

inline constexpr std::array<MapCategory, 4> kAllCategories = {
    MapCategory::kShallowSparse, MapCategory::kShallowDense,
    MapCategory::kSteepSparse, MapCategory::kSteepDense};

struct TerrainMap {
  MapCategory category = MapCategory::kShallowSparse;
  std::uint64_t seed = 0;
  Grid height;    // meters
  Grid friction;  // dimensionless mu
  Grid cost;      // traversal cost, 1 free, infinite on obstacles
};

// -- lattice noise -----------------------------------------------------------

namespace noise {

inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// lattice sample in [-1, 1], pure function of (seed, xi, yi)
inline double lattice(std::uint64_t seed, std::int64_t xi, std::int64_t yi) {
  const std::uint64_t h =
      mix(seed ^ mix(std::uint64_t(xi) * 0x8da6b343ull) ^
          mix(std::uint64_t(yi) * 0xd8163841ull));
  return double(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

inline double fade(double t) { return t * t * (3.0 - 2.0 * t); }

// smooth bilinear interpolation of the lattice
inline double value(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const std::int64_t xi = std::int64_t(fx), yi = std::int64_t(fy);
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double v00 = lattice(seed, xi, yi), v10 = lattice(seed, xi + 1, yi);
  const double v01 = lattice(seed, xi, yi + 1), v11 = lattice(seed, xi + 1, yi + 1);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

inline double fbm(std::uint64_t seed, double x, double y, int octaves) {
  double out = 0.0, amp = 1.0, freq = 1.0, norm = 0.0;
  for (int o = 0; o < octaves; ++o) {
    out += amp * value(seed + std::uint64_t(o) * 0x51ull, x * freq, y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return out / norm;
}

}  // namespace noise

// -- slope limiting ----------------------------------------------------------

// Largest height field below the input whose gradient norm stays under the
// cap: chamfer-style relaxation against all 8 neighbors. The per-pair bound
// uses cap/sqrt(2) so the worst-case two-axis combination still obeys it.
inline void limit_slope(Grid* h, double max_grad_norm) {
  const double per_axis = max_grad_norm / std::sqrt(2.0);
  const int rows = h->rows, cols = h->cols;
  auto relax = [&](int r, int c, int nr, int nc) {
    const double cap =
        per_axis * h->cell * std::hypot(double(nr - r), double(nc - c));
    const double bound = h->at(nr, nc) + cap;
    if (h->at(r, c) > bound) {
      h->at(r, c) = bound;
      return true;
    }
    return false;
  };
  for (int pass = 0; pass < 64; ++pass) {
    bool changed = false;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int dr = -1; dr <= 0; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc >= 0) continue;
            if (!h->inside_cell(r + dr, c + dc)) continue;
            changed |= relax(r, c, r + dr, c + dc);
          }
    for (int r = rows - 1; r >= 0; --r)
      for (int c = cols - 1; c >= 0; --c)
        for (int dr = 0; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc <= 0) continue;
            if (!h->inside_cell(r + dr, c + dc)) continue;
            changed |= relax(r, c, r + dr, c + dc);
          }
    if (!changed) break;
  }
}

// gradient-norm slope angle at a cell, central differences
inline double cell_slope(const Grid& h, int r, int c) {
  const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, h.rows - 1);
  const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, h.cols - 1);
  const double gx = (h.at(r, c1) - h.at(r, c0)) / ((c1 - c0) * h.cell);
  const double gy = (h.at(r1, c) - h.at(r0, c)) / ((r1 - r0) * h.cell);
  return std::atan(std::hypot(gx, gy));
}

// -- course geometry ---------------------------------------------------------

// The canonical course is a figure-8 of two tangent circles meeting at the
// map center; obstacle placement keeps a corridor around it clear.
inline constexpr double kMapSize = 200.0;   // meters per side
inline constexpr double kMapCell = 0.5;     // meters per cell
inline constexpr double kCourseRadius = 30.0;
inline constexpr double kCourseClearance = 9.0;

inline double course_distance(double x, double y) {
  const double cx = kMapSize / 2.0, cy = kMapSize / 2.0;
  const double d1 = std::abs(std::hypot(x - (cx - kCourseRadius), y - cy) - kCourseRadius);
  const double d2 = std::abs(std::hypot(x - (cx + kCourseRadius), y - cy) - kCourseRadius);
  return std::min(d1, d2);
}

// Waypoints around the left loop, counterclockwise from the tangent point;
// one lap of the course used by the simulated experiments.
inline std::vector<std::array<double, 2>> course_waypoints() {
  const double cx = kMapSize / 2.0 - kCourseRadius, cy = kMapSize / 2.0;
  std::vector<std::array<double, 2>> wps;
  for (int k = 1; k <= 8; ++k) {
    const double a = 2.0 * kPi * k / 8.0;
    wps.push_back({cx + kCourseRadius * std::cos(a), cy + kCourseRadius * std::sin(a)});
  }
  return wps;
}

inline State course_start_state() {
  State x{};
  x[kPx] = kMapSize / 2.0;
  x[kPy] = kMapSize / 2.0;
  x[kYaw] = kPi / 2.0;  // counterclockwise entry onto the left loop
  return x;
}

// -- map generation ----------------------------------------------------------

inline TerrainMap generate_map(MapCategory category, std::uint64_t seed) {
  TerrainMap map;
  map.category = category;
  map.seed = seed;
  const int n = int(kMapSize / kMapCell);
  map.height = Grid(n, n, kMapCell, 0.0, 0.0, 0.0);
  map.friction = Grid(n, n, kMapCell, 0.0, 0.0, 0.0);
  map.cost = Grid(n, n, kMapCell, 0.0, 0.0, 1.0);

  // heightmap: fbm scaled for the category, then hard slope caps with a
  // margin under the category promises (shallow <= 10 deg, steep <= 30 deg)
  const bool steep = category_steep(category);
  const double wavelength = steep ? 26.0 : 30.0;
  const double amplitude = steep ? 3.5 : 1.8;
  const double cap = std::tan((steep ? 26.0 : 8.0) * kPi / 180.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double wx = c * kMapCell, wy = r * kMapCell;
      map.height.at(r, c) =
          amplitude * noise::fbm(seed, wx / wavelength, wy / wavelength, 4);
    }
  limit_slope(&map.height, cap);

  // steeper cells cost more to traverse, so planned paths prefer the
  // gentler faces; obstacles and the rim below stay impassable outright
  const double slope_cost_weight = 3.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double s = cell_slope(map.height, r, c);
      map.cost.at(r, c) = 1.0 + slope_cost_weight * s * s;
    }

  // friction: smooth heterogeneous field around 0.7
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double wx = c * kMapCell, wy = r * kMapCell;
      const double f = 0.7 + 0.45 * noise::fbm(seed ^ 0xf71cull, wx / 18.0, wy / 18.0, 3);
      map.friction.at(r, c) = std::min(std::max(f, 0.25), 1.15);
    }

  // obstacles: one candidate list shared by both densities so the dense
  // variant strictly contains the sparse one; the course corridor and the
  // map rim stay clear
  const int n_dense = 180, n_sparse = 45;
  const int used = category_dense(category) ? n_dense : n_sparse;
  std::mt19937_64 rng(noise::mix(seed ^ 0x0b57ac1eull));
  std::uniform_real_distribution<double> pos(10.0, kMapSize - 10.0);
  std::uniform_real_distribution<double> rad(1.0, 3.0);
  for (int i = 0; i < n_dense; ++i) {
    const double ox = pos(rng), oy = pos(rng), orad = rad(rng);
    if (course_distance(ox, oy) < kCourseClearance + orad) continue;
    if (i >= used) continue;
    const int r0 = std::max(0, int((oy - orad) / kMapCell));
    const int r1 = std::min(n - 1, int((oy + orad) / kMapCell) + 1);
    const int c0 = std::max(0, int((ox - orad) / kMapCell));
    const int c1 = std::min(n - 1, int((ox + orad) / kMapCell) + 1);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (std::hypot(c * kMapCell - ox, r * kMapCell - oy) <= orad)
          map.cost.at(r, c) = kInf;
  }
  // boundary wall: the outer two-cell ring is impassable
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (r < 2 || c < 2 || r >= n - 2 || c >= n - 2) map.cost.at(r, c) = kInf;

  return map;
}

// -- sensing -----------------------------------------------------------------

// Sensor footprint used to place the four wheel probes (half wheelbase and
// half track of the onboard model's geometry).
inline constexpr double kSenseHalfLength = 1.35;
inline constexpr double kSenseHalfWidth = 0.8;

// local ground plane at a world point: height gradient of the interpolated
// surface by central differences one cell out
inline void height_gradient(const Grid& h, double x, double y, double* gx,
                            double* gy) {
  const double d = h.cell;
  *gx = (h.bilinear(x + d, y) - h.bilinear(x - d, y)) / (2.0 * d);
  *gy = (h.bilinear(x, y + d) - h.bilinear(x, y - d)) / (2.0 * d);
}

struct GroundPose {
  double roll = 0.0;   // positive when the ground rises to the vehicle's left
  double pitch = 0.0;  // positive climbing
  double mu = 1.0;
};

inline GroundPose ground_pose(const TerrainMap& map, double x, double y,
                              double yaw) {
  double gx = 0.0, gy = 0.0;
  height_gradient(map.height, x, y, &gx, &gy);
  GroundPose g;
  const double ch = std::cos(yaw), sh = std::sin(yaw);
  g.pitch = std::atan(gx * ch + gy * sh);
  g.roll = std::atan(-gx * sh + gy * ch);
  const double f = map.friction.bilinear(x, y);
  g.mu = std::isfinite(f) ? f : 0.7;
  return g;
}

// Terrain input for the onboard stack: roll/pitch of the ground under the
// vehicle plus the four wheel-contact normals rotated into the body frame.
inline TerrainSample sense_terrain(const TerrainMap& map, const State& s,
                                   bool* off_map = nullptr) {
  const double x = s[kPx], y = s[kPy], yaw = s[kYaw];
  if (off_map) *off_map = false;
  if (!map.height.inside_world(x, y)) {
    if (off_map) *off_map = true;
    return flat_terrain();
  }
  const GroundPose g = ground_pose(map, x, y, yaw);

  TerrainSample out = flat_terrain();
  out[kRoll] = g.roll;
  out[kPitch] = g.pitch;

  // body->world rotation rows for R = Rz(yaw) Ry(pitch) Rx(roll); normals
  // go the other way (world into body), so we apply the transpose
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(g.pitch), sp = std::sin(g.pitch);
  const double cr = std::cos(g.roll), sr = std::sin(g.roll);
  const double R[3][3] = {
      {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
      {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
      {-sp, cp * sr, cp * cr}};

  const double fx[4] = {kSenseHalfLength, kSenseHalfLength, -kSenseHalfLength,
                        -kSenseHalfLength};
  const double fy[4] = {kSenseHalfWidth, -kSenseHalfWidth, kSenseHalfWidth,
                        -kSenseHalfWidth};
  for (int w = 0; w < 4; ++w) {
    const double wx = x + fx[w] * cy - fy[w] * sy;
    const double wy = y + fx[w] * sy + fy[w] * cy;
    double gx = 0.0, gyv = 0.0;
    height_gradient(map.height, wx, wy, &gx, &gyv);
    const double norm = std::sqrt(gx * gx + gyv * gyv + 1.0);
    const double nw[3] = {-gx / norm, -gyv / norm, 1.0 / norm};
    for (int a = 0; a < 3; ++a)
      out[kNormals + 3 * w + a] =
          R[0][a] * nw[0] + R[1][a] * nw[1] + R[2][a] * nw[2];
  }
  return out;
}

}  // namespace metadapt
