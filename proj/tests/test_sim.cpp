#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "metadapt/episode.hpp"
#include "metadapt/sim_vehicle.hpp"
#include "metadapt/terrain.hpp"

using namespace metadapt;

namespace {

// generated maps are expensive enough to cache per category
const TerrainMap& the_map(MapCategory c) {
  static TerrainMap maps[4] = {
      generate_map(MapCategory::kShallowSparse, 42),
      generate_map(MapCategory::kShallowDense, 42),
      generate_map(MapCategory::kSteepSparse, 42),
      generate_map(MapCategory::kSteepDense, 42),
  };
  return maps[int(c)];
}

TerrainMap flat_map(double mu = 0.9) {
  TerrainMap map;
  map.category = MapCategory::kShallowSparse;
  const int n = int(kMapSize / kMapCell);
  map.height = Grid(n, n, kMapCell, 0.0, 0.0, 0.0);
  map.friction = Grid(n, n, kMapCell, 0.0, 0.0, mu);
  map.cost = Grid(n, n, kMapCell, 0.0, 0.0, 1.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (r < 2 || c < 2 || r >= n - 2 || c >= n - 2) map.cost.at(r, c) = kInf;
  return map;
}

TerrainMap ramp_map(double grade) {
  TerrainMap map = flat_map();
  for (int r = 0; r < map.height.rows; ++r)
    for (int c = 0; c < map.height.cols; ++c)
      map.height.at(r, c) = grade * (c * kMapCell);
  return map;
}

int obstacle_cells(const TerrainMap& map) {
  int count = 0;
  for (int r = 2; r < map.cost.rows - 2; ++r)
    for (int c = 2; c < map.cost.cols - 2; ++c)
      if (!std::isfinite(map.cost.at(r, c))) ++count;
  return count;
}

std::vector<double> interior_slopes(const TerrainMap& map) {
  std::vector<double> s;
  for (int r = 1; r < map.height.rows - 1; ++r)
    for (int c = 1; c < map.height.cols - 1; ++c)
      s.push_back(cell_slope(map.height, r, c));
  return s;
}

double deg(double rad) { return rad * 180.0 / kPi; }

// small onboard stack for closed-loop tests
OnboardModel desk_model(AdaptMode mode) {
  OnboardModel m;
  m.net = init_net_params(3, 8, 4);
  m.psi = onboard_params();
  m.filter = default_filter_params(4);
  m.mode = mode;
  return m;
}

EpisodeConfig desk_config() {
  EpisodeConfig cfg;
  cfg.mppi.samples = 32;
  cfg.mppi.horizon = 30;
  cfg.mppi.lambda = 20.0;
  cfg.timeout = 6.0;
  cfg.pred_horizon = 2.0;
  cfg.pred_every = 1.0;
  return cfg;
}

bool same_state(const State& a, const State& b) {
  for (int i = 0; i < kStateDim; ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("map generation is deterministic and grids share shape") {
  const TerrainMap& a = the_map(MapCategory::kSteepDense);
  const TerrainMap b = generate_map(MapCategory::kSteepDense, 42);
  CHECK(a.height.v == b.height.v);
  CHECK(a.friction.v == b.friction.v);
  CHECK(a.cost.v == b.cost.v);

  for (MapCategory c : kAllCategories) {
    const TerrainMap& m = the_map(c);
    CHECK(m.height.rows == m.friction.rows);
    CHECK(m.height.cols == m.cost.cols);
    CHECK(m.height.cell == m.cost.cell);
    for (double h : m.height.v) CHECK(std::isfinite(h));
    for (double f : m.friction.v) {
      CHECK(f >= 0.2);
      CHECK(f <= 1.2);
    }
  }
}

TEST_CASE("slope statistics respect the category targets") {
  auto shallow = interior_slopes(the_map(MapCategory::kShallowSparse));
  auto steep = interior_slopes(the_map(MapCategory::kSteepSparse));

  CHECK(deg(*std::max_element(shallow.begin(), shallow.end())) <= 10.0);
  CHECK(deg(*std::max_element(steep.begin(), steep.end())) <= 30.0);

  std::sort(steep.begin(), steep.end());
  const double p90 = steep[std::size_t(0.9 * double(steep.size()))];
  CHECK(deg(p90) > 10.0);
}

TEST_CASE("dense obstacles strictly contain the sparse set") {
  const TerrainMap& sparse = the_map(MapCategory::kShallowSparse);
  const TerrainMap& dense = the_map(MapCategory::kShallowDense);
  CHECK(obstacle_cells(dense) > obstacle_cells(sparse));
  for (int r = 2; r < sparse.cost.rows - 2; ++r)
    for (int c = 2; c < sparse.cost.cols - 2; ++c)
      if (!std::isfinite(sparse.cost.at(r, c)))
        CHECK(!std::isfinite(dense.cost.at(r, c)));
}

TEST_CASE("the course corridor stays free of obstacles") {
  for (MapCategory cat : kAllCategories) {
    const TerrainMap& m = the_map(cat);
    for (int side = 0; side < 2; ++side) {
      const double cx = kMapSize / 2.0 + (side ? 1.0 : -1.0) * kCourseRadius;
      for (int k = 0; k < 100; ++k) {
        const double a = 2.0 * kPi * k / 100.0;
        const double x = cx + kCourseRadius * std::cos(a);
        const double y = kMapSize / 2.0 + kCourseRadius * std::sin(a);
        const int r = int(std::lround(y / kMapCell));
        const int c = int(std::lround(x / kMapCell));
        CHECK(std::isfinite(m.cost.at(r, c)));
      }
    }
  }
}

TEST_CASE("flat ground senses zero attitude and vertical normals") {
  const TerrainMap map = flat_map();
  State x{};
  x[kPx] = 80.0;
  x[kPy] = 120.0;
  x[kYaw] = 0.7;
  bool off = true;
  const TerrainSample y = sense_terrain(map, x, &off);
  CHECK(!off);
  CHECK(y[kRoll] == 0.0);
  CHECK(y[kPitch] == 0.0);
  for (int w = 0; w < 4; ++w) {
    CHECK(y[kNormals + 3 * w + 0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y[kNormals + 3 * w + 1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y[kNormals + 3 * w + 2] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ramp grade maps to pitch and roll by heading") {
  const double grade = 0.1;
  const TerrainMap map = ramp_map(grade);
  State x{};
  x[kPx] = 100.0;
  x[kPy] = 100.0;

  x[kYaw] = 0.0;  // climbing along the gradient
  TerrainSample y = sense_terrain(map, x);
  CHECK(y[kPitch] == doctest::Approx(std::atan(grade)).epsilon(1e-9));
  CHECK(y[kRoll] == doctest::Approx(0.0).epsilon(1e-12));

  x[kYaw] = kPi / 2.0;  // contour line: ground falls off to the left
  y = sense_terrain(map, x);
  CHECK(y[kPitch] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y[kRoll] == doctest::Approx(-std::atan(grade)).epsilon(1e-9));

  x[kYaw] = kPi;  // descending
  y = sense_terrain(map, x);
  CHECK(y[kPitch] == doctest::Approx(-std::atan(grade)).epsilon(1e-9));
}

TEST_CASE("wheel normals are unit length and match the analytic surface") {
  // gentle quadratic bowl; curvature small enough that grid interpolation
  // stays inside the comparison tolerance
  const double a = 0.0005, b = -0.0004, c = 0.0003, d = 0.01, e = 0.02;
  TerrainMap map = flat_map();
  for (int r = 0; r < map.height.rows; ++r)
    for (int cc = 0; cc < map.height.cols; ++cc) {
      const double x = cc * kMapCell, y = r * kMapCell;
      map.height.at(r, cc) = a * x * x + b * x * y + c * y * y + d * x + e * y;
    }
  const auto grad = [&](double x, double y) {
    return std::array<double, 2>{2.0 * a * x + b * y + d,
                                 b * x + 2.0 * c * y + e};
  };

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos(85.0, 115.0);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  for (int trial = 0; trial < 20; ++trial) {
    State s{};
    s[kPx] = pos(rng);
    s[kPy] = pos(rng);
    s[kYaw] = ang(rng);
    const TerrainSample y = sense_terrain(map, s);

    // independent reconstruction of the expected body-frame normals
    const auto g0 = grad(s[kPx], s[kPy]);
    const double ch = std::cos(s[kYaw]), sh = std::sin(s[kYaw]);
    const double pitch = std::atan(g0[0] * ch + g0[1] * sh);
    const double roll = std::atan(-g0[0] * sh + g0[1] * ch);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    const double cr = std::cos(roll), sr = std::sin(roll);
    const double R[3][3] = {
        {ch * cp, ch * sp * sr - sh * cr, ch * sp * cr + sh * sr},
        {sh * cp, sh * sp * sr + ch * cr, sh * sp * cr - ch * sr},
        {-sp, cp * sr, cp * cr}};
    const double fx[4] = {kSenseHalfLength, kSenseHalfLength,
                          -kSenseHalfLength, -kSenseHalfLength};
    const double fy[4] = {kSenseHalfWidth, -kSenseHalfWidth, kSenseHalfWidth,
                          -kSenseHalfWidth};
    for (int w = 0; w < 4; ++w) {
      const double nx = y[kNormals + 3 * w + 0];
      const double ny = y[kNormals + 3 * w + 1];
      const double nz = y[kNormals + 3 * w + 2];
      CHECK(std::sqrt(nx * nx + ny * ny + nz * nz) ==
            doctest::Approx(1.0).epsilon(1e-9));
      CHECK(nz > 0.0);

      const double wx = s[kPx] + fx[w] * ch - fy[w] * sh;
      const double wy = s[kPy] + fx[w] * sh + fy[w] * ch;
      const auto gw = grad(wx, wy);
      const double norm = std::sqrt(gw[0] * gw[0] + gw[1] * gw[1] + 1.0);
      const double nw[3] = {-gw[0] / norm, -gw[1] / norm, 1.0 / norm};
      for (int axis = 0; axis < 3; ++axis) {
        const double want =
            R[0][axis] * nw[0] + R[1][axis] * nw[1] + R[2][axis] * nw[2];
        CHECK(y[kNormals + 3 * w + axis] == doctest::Approx(want).epsilon(1e-3));
      }
    }
  }
}

TEST_CASE("off-map sensing falls back to flat terrain and flags it") {
  const TerrainMap map = flat_map();
  State x{};
  x[kPx] = -5.0;
  x[kPy] = 50.0;
  bool off = false;
  const TerrainSample y = sense_terrain(map, x, &off);
  CHECK(off);
  CHECK(y == flat_terrain());
}

TEST_CASE("straight line on flat ground stays straight") {
  const TerrainMap map = flat_map();
  const SimParams p = deploy_sim_params();
  State x0{};
  x0[kPx] = 50.0;
  x0[kPy] = 100.0;
  SimState s = sim_start(x0);
  const Control u = {0.5, 0.0, 0.0};
  for (int k = 0; k < 400; ++k) s = sim_step(s, u, map, p, 0.02);
  CHECK(s.x[kPy] == 100.0);
  CHECK(s.x[kYaw] == 0.0);
  CHECK(s.x[kVy] == 0.0);
  CHECK(s.x[kYawRate] == 0.0);
  CHECK(s.x[kPx] > 70.0);
  CHECK(s.x[kVx] > 5.0);
}

TEST_CASE("low-speed turning settles on the kinematic circle") {
  const TerrainMap map = flat_map();
  const SimParams p = deploy_sim_params();
  State x0{};
  x0[kPx] = 100.0;
  x0[kPy] = 100.0;
  SimState s = sim_start(x0);
  const Control u = {0.06, 0.0, 0.5};
  for (int k = 0; k < 900; ++k) s = sim_step(s, u, map, p, 0.02);

  CHECK(s.x[kVx] > 0.5);
  CHECK(s.x[kVx] < p.blend_speed);
  const double delta = p.steer_ratio * s.x[kSteerCol];
  CHECK(s.x[kSteerCol] == doctest::Approx(0.5 * p.steer_col_max).epsilon(1e-6));
  const double want_radius = (p.lf + p.lr) / std::tan(delta);
  const double radius =
      std::hypot(s.x[kVx], s.x[kVy]) / std::abs(s.x[kYawRate]);
  CHECK(radius == doctest::Approx(want_radius).epsilon(0.03));
}

TEST_CASE("drive force saturates at the friction budget") {
  const double mu = 0.3;
  const TerrainMap map = flat_map(mu);
  SimParams p = datagen_sim_params();
  p.grip_scale = 1.0;  // unit grip scale: the cap is exactly mu * load
  State x0{};
  x0[kPx] = 100.0;
  x0[kPy] = 100.0;
  x0[kVx] = 3.0;
  x0[kEngine] = p.engine_gain;  // drivetrain already spun up

  const double wb = p.lf + p.lr;
  const double fz_f = p.mass * kGravity * p.lr / wb;
  const double fz_r = p.mass * kGravity * p.lf / wb;
  const double slip = (p.engine_wheel_ratio * x0[kEngine] - 3.0) / 3.0;
  REQUIRE(p.drive_stiffness * slip > mu * fz_r);  // demand exceeds the cap

  const SimState n = sim_step(sim_start(x0), {1.0, 0.0, 0.0}, map, p, 0.02);
  const double ax = (n.x[kVx] - x0[kVx]) / 0.02;
  CHECK(ax <= mu * kGravity + 1e-9);
  // the rear axle pins at exactly mu * load (rolling drag is swallowed by
  // the saturation); the front axle only rolls
  const double want = (mu * fz_r - p.rolling_resistance * fz_f * std::tanh(6.0) -
                       p.aero_drag * 9.0) /
                      p.mass;
  CHECK(ax == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("coasting on flat ground never gains kinetic energy") {
  const TerrainMap map = flat_map();
  const SimParams p = deploy_sim_params();
  const auto ke = [&](const State& x) {
    return 0.5 * p.mass * (x[kVx] * x[kVx] + x[kVy] * x[kVy]) +
           0.5 * p.yaw_inertia * x[kYawRate] * x[kYawRate];
  };

  for (double v0 : {2.0, 8.0, 15.0}) {
    State x0{};
    x0[kPx] = 100.0;
    x0[kPy] = 100.0;
    x0[kVx] = v0;
    if (v0 > 10.0) {
      // turning entry consistent with a held wheel angle
      x0[kSteerCol] = 1.0;
      const double delta = p.steer_ratio * x0[kSteerCol];
      x0[kYawRate] = v0 * std::tan(delta) / (p.lf + p.lr);
      x0[kVy] = x0[kYawRate] * p.lr;
    }
    SimState s = sim_start(x0);
    double prev = ke(s.x);
    for (int k = 0; k < 600; ++k) {
      s = sim_step(s, Control{}, map, p, 0.02);
      const double cur = ke(s.x);
      CHECK(cur <= prev + 1e-9);
      prev = cur;
    }
  }
}

TEST_CASE("episode rejects an empty waypoint list") {
  const TerrainMap map = flat_map();
  CHECK(!run_episode(map, desk_model(AdaptMode::kNone), {}, desk_config()));
}

TEST_CASE("goal under the start pose completes immediately") {
  const TerrainMap map = flat_map();
  const auto log =
      run_episode(map, desk_model(AdaptMode::kNone), {{100.0, 100.0}},
                  desk_config());
  REQUIRE(log.has_value());
  CHECK(log->summary.completed);
  CHECK(log->summary.duration == 0.0);
  CHECK(log->summary.waypoints_reached == 1);
  CHECK(log->steps.empty());
}

TEST_CASE("episode logs are bitwise reproducible") {
  const TerrainMap map = flat_map();
  const OnboardModel model = desk_model(AdaptMode::kKalman);
  EpisodeConfig cfg = desk_config();
  const std::vector<std::array<double, 2>> wps = {{100.0, 130.0}};

  const auto a = run_episode(map, model, wps, cfg);
  const auto b = run_episode(map, model, wps, cfg);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  REQUIRE(a->steps.size() == b->steps.size());
  for (std::size_t k = 0; k < a->steps.size(); ++k) {
    CHECK(same_state(a->steps[k].truth, b->steps[k].truth));
    CHECK(same_state(a->steps[k].measured, b->steps[k].measured));
    CHECK(a->steps[k].u == b->steps[k].u);
    CHECK(a->steps[k].theta == b->steps[k].theta);
  }
  CHECK(a->summary.completed == b->summary.completed);
  CHECK(a->summary.duration == b->summary.duration);
  CHECK(a->summary.pred_error_mean == b->summary.pred_error_mean);
  CHECK(a->summary.rollover_exceed_time == b->summary.rollover_exceed_time);
  CHECK(a->summary.replans == b->summary.replans);
}

TEST_CASE("measurement noise has the configured scale and leaves actuators exact") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 8.0;
  const auto log = run_episode(map, desk_model(AdaptMode::kNone),
                               {{100.0, 170.0}}, cfg);
  REQUIRE(log.has_value());
  REQUIRE(log->steps.size() > 300);

  double sq_px = 0.0, sq_vy = 0.0, sq_yaw = 0.0;
  for (const auto& st : log->steps) {
    sq_px += std::pow(st.measured[kPx] - st.truth[kPx], 2);
    sq_vy += std::pow(st.measured[kVy] - st.truth[kVy], 2);
    sq_yaw += std::pow(st.measured[kYaw] - st.truth[kYaw], 2);
    CHECK(st.measured[kBrake] == st.truth[kBrake]);
    CHECK(st.measured[kSteerCol] == st.truth[kSteerCol]);
    CHECK(st.measured[kSteerVel] == st.truth[kSteerVel]);
    CHECK(st.measured[kEngine] == st.truth[kEngine]);
  }
  const double n = double(log->steps.size());
  CHECK(std::sqrt(sq_px / n) == doctest::Approx(cfg.noise_pos).epsilon(0.4));
  CHECK(std::sqrt(sq_vy / n) == doctest::Approx(cfg.noise_vel).epsilon(0.4));
  CHECK(std::sqrt(sq_yaw / n) == doctest::Approx(cfg.noise_yaw).epsilon(0.4));
}

TEST_CASE("the measurement stream does not depend on the control seed") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 2.0;
  cfg.noise_seed = 11;
  cfg.control_seed = 1;
  const auto a = run_episode(map, desk_model(AdaptMode::kNone),
                             {{100.0, 170.0}}, cfg);
  cfg.control_seed = 2;
  const auto b = run_episode(map, desk_model(AdaptMode::kNone),
                             {{100.0, 170.0}}, cfg);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  // identical truth and noise stream at the first step, before the control
  // choice has had any influence
  CHECK(same_state(a->steps[0].measured, b->steps[0].measured));
  CHECK(a->steps[0].u != b->steps[0].u);
}

TEST_CASE("timeout reports an incomplete episode") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 2.0;
  const auto log = run_episode(map, desk_model(AdaptMode::kNone),
                               {{100.0, 170.0}}, cfg);
  REQUIRE(log.has_value());
  CHECK(!log->summary.completed);
  CHECK(log->summary.duration == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(log->steps.size() == 100);
}

TEST_CASE("leaving the map is flagged and ends the episode") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 4.0;
  cfg.mppi.noise_std = {0.0, 0.0, 0.0};  // plan stays at zero: pure coasting
  State start{};
  start[kPx] = 100.0;
  start[kPy] = 190.0;
  start[kYaw] = kPi / 2.0;
  start[kVx] = 14.0;
  cfg.start = start;
  const auto log = run_episode(map, desk_model(AdaptMode::kNone),
                               {{100.0, 120.0}}, cfg);
  REQUIRE(log.has_value());
  CHECK(log->summary.left_map);
  CHECK(!log->summary.completed);
}

TEST_CASE("baseline coefficients stay zero while the filter moves") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 3.0;

  const auto base = run_episode(map, desk_model(AdaptMode::kNone),
                                {{100.0, 150.0}}, cfg);
  REQUIRE(base.has_value());
  for (const auto& st : base->steps)
    for (double t : st.theta) CHECK(t == 0.0);

  const auto adapt = run_episode(map, desk_model(AdaptMode::kKalman),
                                 {{100.0, 150.0}}, cfg);
  REQUIRE(adapt.has_value());
  double moved = 0.0;
  for (double t : adapt->steps.back().theta) moved += std::abs(t);
  CHECK(moved > 0.0);
}

TEST_CASE("prediction trackers score the rolled-out open loop") {
  const TerrainMap map = flat_map();
  EpisodeConfig cfg = desk_config();
  cfg.timeout = 8.0;
  const auto log = run_episode(map, desk_model(AdaptMode::kNone),
                               {{100.0, 170.0}}, cfg);
  REQUIRE(log.has_value());
  CHECK(log->summary.pred_count >= 4);
  CHECK(log->predictions.size() == std::size_t(log->summary.pred_count));
  for (std::size_t k = 0; k < log->predictions.size(); ++k) {
    const auto& p = log->predictions[k];
    CHECK(p.horizon == cfg.pred_horizon);
    CHECK(std::isfinite(p.error));
    CHECK(p.error >= 0.0);
    CHECK(p.error < 50.0);
    if (k > 0)
      CHECK(p.t0 - log->predictions[k - 1].t0 ==
            doctest::Approx(cfg.pred_every).epsilon(1e-9));
  }
  CHECK(log->summary.pred_error_mean > 0.0);
}
