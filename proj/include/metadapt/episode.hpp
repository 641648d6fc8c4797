#pragma once

// Closed-loop experiment episode: 50 Hz ground truth, 30 Hz receding-horizon
// control from noisy measurements, 5 Hz residual adaptation, and open-loop
// prediction scoring against the realized trajectory. Everything is seeded,
// so a rerun with the same inputs reproduces the log bitwise.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "metadapt/cost_to_go.hpp"
#include "metadapt/kalman.hpp"
#include "metadapt/mppi.hpp"
#include "metadapt/network.hpp"
#include "metadapt/sim_vehicle.hpp"
#include "metadapt/sliding_lsq.hpp"
#include "metadapt/terrain.hpp"

namespace metadapt {

enum class AdaptMode { kNone, kSlidingLsq, kKalman };

inline const char* adapt_mode_name(AdaptMode m) {
  switch (m) {
    case AdaptMode::kNone: return "none";
    case AdaptMode::kSlidingLsq: return "sliding-lsq";
    case AdaptMode::kKalman: return "kalman";
  }
  return "unknown";
}

// Everything the vehicle carries: the model, the residual net, and how (or
// whether) the fast coefficients are updated online.
struct OnboardModel {
  NetParams net;
  VehicleParams psi;
  FilterParams filter;
  AdaptMode mode = AdaptMode::kNone;
  int lsq_window = 25;
  double lsq_ridge = 1.0;
};

struct EpisodeConfig {
  SimParams sim = deploy_sim_params();
  MppiConfig mppi;
  CostConfig cost;

  double sim_dt = 0.02;
  double control_hz = 30.0;
  int adapt_steps = 10;  // truth steps per adaptation window
  double waypoint_tol = 5.0;
  double timeout = 90.0;
  double beta = 1.0;  // coefficient decay per adaptation cycle

  // measurement noise; actuator channels are read exactly
  double noise_pos = 0.05;
  double noise_yaw = 0.01;
  double noise_vel = 0.05;
  double noise_yaw_rate = 0.01;

  std::uint64_t noise_seed = 7;
  std::uint64_t control_seed = 99;

  // open-loop prediction scoring
  double pred_horizon = 5.0;  // s
  double pred_every = 1.0;    // s between tracker starts

  State start = course_start_state();
};

struct StepRecord {
  double t = 0.0;
  State truth{};
  State measured{};
  Control u{};
  TerrainSample y{};
  std::vector<double> theta;
  double plan_cost = 0.0;  // best cost at the plan this step executes
};

struct PredictionRecord {
  double t0 = 0.0;
  double horizon = 0.0;
  double error = 0.0;  // endpoint position error, m
};

struct EpisodeSummary {
  bool completed = false;
  bool left_map = false;
  double duration = 0.0;
  double avg_speed = 0.0;
  int waypoints_reached = 0;
  int waypoints_total = 0;
  double pred_error_mean = 0.0;
  int pred_count = 0;
  double rollover_exceed_time = 0.0;
  int rollover_crossings = 0;
  double rollover_cost = 0.0;  // integrated stage penalty on the true vehicle
  double min_wheel_loading = 1.0;
  int replans = 0;
  int fallbacks = 0;
  int filter_resets = 0;
  double mean_plan_cost = 0.0;
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  std::vector<PredictionRecord> predictions;
  EpisodeSummary summary;
};

namespace detail {

// Open-loop rollout of the onboard model from a past measurement, advanced
// with the controls actually applied since; scored when it reaches full age.
struct PredictionTracker {
  State xhat{};
  Theta theta;
  double t0 = 0.0;
  int age = 0;
  bool alive = true;
};

inline void advance_tracker(PredictionTracker* tr, const OnboardModel& m,
                            const Control& u, const TerrainSample& y,
                            double dt) {
  if (!tr->alive) {
    ++tr->age;
    return;
  }
  const auto tf = tire_forces<double>(tr->xhat, y, m.psi);
  const auto eta = residual_features<double>(tr->xhat, u, y, tf);
  const auto zeta = residual_force(m.net, eta, tr->theta);
  const auto next = step(tr->xhat, u, y, m.psi, zeta, dt);
  if (next)
    tr->xhat = *next;
  else
    tr->alive = false;  // model blew up; score the frozen state
  ++tr->age;
}

}  // namespace detail

inline std::optional<EpisodeLog> run_episode(
    const TerrainMap& map, const OnboardModel& model,
    const std::vector<std::array<double, 2>>& waypoints,
    const EpisodeConfig& cfg) {
  if (waypoints.empty()) return std::nullopt;

  EpisodeLog log;
  log.summary.waypoints_total = int(waypoints.size());

  // one cost-to-go field per waypoint, built upfront
  std::vector<CostToGoField> fields;
  for (const auto& wp : waypoints) {
    const int gr = int(std::lround((wp[1] - map.cost.oy) / map.cost.cell));
    const int gc = int(std::lround((wp[0] - map.cost.ox) / map.cost.cell));
    auto f = build_cost_to_go(map.cost, gr, gc);
    if (!f) return std::nullopt;  // goal unreachable by construction
    fields.push_back(std::move(*f));
  }

  SimState s = sim_start(cfg.start);
  std::mt19937_64 noise_rng(cfg.noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto measure = [&](const State& truth) {
    State m = truth;
    m[kPx] += cfg.noise_pos * gauss(noise_rng);
    m[kPy] += cfg.noise_pos * gauss(noise_rng);
    m[kYaw] += cfg.noise_yaw * gauss(noise_rng);
    m[kVx] += cfg.noise_vel * gauss(noise_rng);
    m[kVy] += cfg.noise_vel * gauss(noise_rng);
    m[kYawRate] += cfg.noise_yaw_rate * gauss(noise_rng);
    return m;
  };

  Planner planner(cfg.mppi, cfg.cost);
  Theta theta = zero_theta(model.net);
  AdaptState ast = init_adapt_state(model.filter);
  SlidingLsq lsq(model.net.theta_dim(), model.lsq_window, model.lsq_ridge);

  const int pred_steps = int(std::lround(cfg.pred_horizon / cfg.sim_dt));
  const int pred_stride = int(std::lround(cfg.pred_every / cfg.sim_dt));
  std::vector<detail::PredictionTracker> trackers;

  // adaptation window accumulators
  State win_x0{};
  std::vector<Control> win_u;
  std::vector<TerrainSample> win_y;

  std::size_t wp_idx = 0;
  ControlSeq plan;
  double plan_cost = kInf;
  int steps_since_plan = 0;
  double next_control_t = 0.0;
  double speed_sum = 0.0;
  double plan_cost_sum = 0.0;
  int plan_cost_count = 0;
  double prev_load = 1.0;

  const int max_steps = int(std::lround(cfg.timeout / cfg.sim_dt));
  for (int k = 0; k <= max_steps; ++k) {
    // waypoint bookkeeping first, so a goal at the start pose completes at
    // time zero without a single control period
    while (wp_idx < waypoints.size() &&
           std::hypot(s.x[kPx] - waypoints[wp_idx][0],
                      s.x[kPy] - waypoints[wp_idx][1]) <= cfg.waypoint_tol) {
      ++wp_idx;
      ++log.summary.waypoints_reached;
    }
    if (wp_idx == waypoints.size()) {
      log.summary.completed = true;
      break;
    }
    if (k == max_steps) break;  // timed out, reported below

    const State measured = measure(s.x);
    const TerrainSample y = sense_terrain(map, s.x);

    if (s.t >= next_control_t) {
      const std::uint64_t seed =
          cfg.control_seed + 1000003ull * std::uint64_t(log.summary.replans);
      const PlannerModel pm{&model.net, &theta, &model.psi};
      const PlanResult r =
          planner.replan(measured, fields[wp_idx], pm, seed,
                         [&](const State& xs) { return sense_terrain(map, xs); });
      plan = r.u;
      plan_cost = r.best_cost;
      steps_since_plan = 0;
      ++log.summary.replans;
      if (r.fallback) ++log.summary.fallbacks;
      if (std::isfinite(r.best_cost)) {
        plan_cost_sum += r.best_cost;
        ++plan_cost_count;
      }
      next_control_t += 1.0 / cfg.control_hz;
    }
    const Control u =
        plan.empty() ? Control{}
                     : plan[std::min<std::size_t>(steps_since_plan, plan.size() - 1)];
    ++steps_since_plan;

    StepRecord rec;
    rec.t = s.t;
    rec.truth = s.x;
    rec.measured = measured;
    rec.u = u;
    rec.y = y;
    rec.theta = theta;
    rec.plan_cost = plan_cost;
    log.steps.push_back(std::move(rec));

    // rollover exposure on the true vehicle
    const GroundPose gp = map.height.inside_world(s.x[kPx], s.x[kPy])
                              ? ground_pose(map, s.x[kPx], s.x[kPy], s.x[kYaw])
                              : GroundPose{};
    const double load = sim_min_wheel_loading(s.x, gp.roll, cfg.sim);
    log.summary.min_wheel_loading = std::min(log.summary.min_wheel_loading, load);
    if (load < cfg.cost.rollover_limit) {
      log.summary.rollover_exceed_time += cfg.sim_dt;
      if (prev_load >= cfg.cost.rollover_limit) ++log.summary.rollover_crossings;
      log.summary.rollover_cost +=
          cfg.sim_dt * cfg.cost.rollover_weight *
          std::pow(cfg.cost.rollover_limit - load, cfg.cost.rollover_power);
    }
    prev_load = load;
    speed_sum += std::hypot(s.x[kVx], s.x[kVy]);

    // open-loop prediction trackers ride along with the applied inputs
    if (pred_stride > 0 && k % pred_stride == 0 && pred_steps > 0) {
      detail::PredictionTracker tr;
      tr.xhat = measured;
      tr.theta = theta;
      tr.t0 = s.t;
      trackers.push_back(std::move(tr));
    }
    for (auto& tr : trackers)
      detail::advance_tracker(&tr, model, u, y, cfg.sim_dt);

    // adaptation window bookkeeping
    if (model.mode != AdaptMode::kNone) {
      if (win_u.empty()) win_x0 = measured;
      win_u.push_back(u);
      win_y.push_back(y);
    }

    s = sim_step(s, u, map, cfg.sim, cfg.sim_dt);

    if (!map.height.inside_world(s.x[kPx], s.x[kPy])) {
      log.summary.left_map = true;
      break;
    }

    // score trackers that reached full age against the fresh truth
    for (auto& tr : trackers)
      if (tr.age == pred_steps) {
        PredictionRecord pr;
        pr.t0 = tr.t0;
        pr.horizon = cfg.pred_horizon;
        pr.error = std::hypot(tr.xhat[kPx] - s.x[kPx], tr.xhat[kPy] - s.x[kPy]);
        log.predictions.push_back(pr);
      }
    while (!trackers.empty() && trackers.front().age >= pred_steps)
      trackers.erase(trackers.begin());

    if (model.mode != AdaptMode::kNone && int(win_u.size()) == cfg.adapt_steps) {
      WindowData w;
      w.x0 = win_x0;
      w.u = win_u;
      w.y = win_y;
      w.x1 = measure(s.x);
      if (model.mode == AdaptMode::kKalman) {
        const WindowDiag diag = adapt_window<double>(
            model.net, model.psi, model.filter, cfg.beta, cfg.sim_dt, w, &ast);
        if (diag.reset) ++log.summary.filter_resets;
        theta = ast.theta;
      } else {
        const auto prop = multi_step_jacobian<double>(model.net, model.psi,
                                                      theta, w.x0, w.u, w.y,
                                                      cfg.sim_dt);
        const int n = model.net.theta_dim();
        MatX<double> ch(kResidualDim, n);
        std::array<double, 3> target{};
        for (int c = 0; c < kResidualDim; ++c) {
          double affine = 0.0;
          for (int j = 0; j < n; ++j) {
            ch(c, j) = prop.sens(kVx + c, j);
            affine += ch(c, j) * theta[j];
          }
          target[c] = w.x1[kVx + c] - prop.x_end[kVx + c] + affine;
        }
        lsq.add_cycle(ch, target);
        std::vector<double> fit;
        if (lsq.solve(&fit)) theta = fit;
      }
      win_u.clear();
      win_y.clear();
    }
  }

  log.summary.duration = s.t;
  if (!log.steps.empty())
    log.summary.avg_speed = speed_sum / double(log.steps.size());
  if (!log.predictions.empty()) {
    double e = 0.0;
    for (const auto& p : log.predictions) e += p.error;
    log.summary.pred_error_mean = e / double(log.predictions.size());
    log.summary.pred_count = int(log.predictions.size());
  }
  if (plan_cost_count > 0)
    log.summary.mean_plan_cost = plan_cost_sum / double(plan_cost_count);
  return log;
}

}  // namespace metadapt
