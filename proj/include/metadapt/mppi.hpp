#pragma once

// Sampling-based receding-horizon controller. Each call perturbs a nominal
// control sequence with Gaussian noise, rolls every candidate out on the
// adapted model, scores path cost plus cost-to-go, and blends the samples
// with softmin weights. Only the shifted nominal sequence survives between
// calls.

#include <cstdint>
#include <random>

#include "metadapt/cost_to_go.hpp"
#include "metadapt/dynamics.hpp"
#include "metadapt/network.hpp"

namespace metadapt {

using ControlSeq = std::vector<Control>;

struct MppiConfig {
  int samples = 256;
  int horizon = 250;   // controls per sequence, one model step each
  double lambda = 20.0;
  double dt = 0.02;
  std::array<double, kControlDim> noise_std = {0.20, 0.15, 0.25};
  std::array<double, kControlDim> u_lo = {0.0, 0.0, -1.0};
  std::array<double, kControlDim> u_hi = {1.0, 1.0, 1.0};
  bool collect_costs = false;  // keep per-sample costs for debug dumps
};

struct CostConfig {
  double rollover_power = 2.0;
  double rollover_limit = 0.3;  // minimum acceptable wheel loading
  double rollover_weight = 50.0;
  double track_weight = 1.0;
  double boundary_penalty = 1000.0;
  std::array<double, kControlDim> control_weights = {0.05, 0.05, 0.10};
  double slip_weight = 0.05;
};

// Mass-normalized left/right wheel loading from static split plus lateral
// load transfer; the lateral acceleration estimate comes from the forward
// speed and the commanded steering geometry, the inclination from terrain
// roll. 0.5/0.5 means balanced, 0 means a side is airborne.
struct WheelLoading {
  double left = 0.5;
  double right = 0.5;
};

inline WheelLoading wheel_loading(const State& x, const TerrainSample& y,
                                  const VehicleParams& psi) {
  const double delta = psi.steer_ratio * x[kSteerCol];
  const double a_lat = x[kVx] * x[kVx] * std::tan(delta) / psi.wheelbase;
  const double shift =
      (psi.cg_height / psi.track_width) * (a_lat / kGravity + std::tan(y[kRoll]));
  WheelLoading w;
  w.left = std::min(std::max(0.5 - shift, 0.0), 1.0);
  w.right = std::min(std::max(0.5 + shift, 0.0), 1.0);
  return w;
}

inline double rollover_cost(const State& x, const TerrainSample& y,
                            const VehicleParams& psi, const CostConfig& cc) {
  const WheelLoading w = wheel_loading(x, y, psi);
  const double m = std::min(w.left, w.right);
  if (m >= cc.rollover_limit) return 0.0;
  return cc.rollover_weight * std::pow(cc.rollover_limit - m, cc.rollover_power);
}

inline double track_cost(const State& x, const CostToGoField& field,
                         const CostConfig& cc) {
  if (!field.track.inside_world(x[kPx], x[kPy])) return cc.boundary_penalty;
  const double t = field.track.bilinear(x[kPx], x[kPy]);
  if (!std::isfinite(t)) return cc.boundary_penalty;
  return cc.track_weight * (t - 1.0);  // passable cells cost >= 1
}

inline double slip_measure(const State& x, const VehicleParams& psi) {
  const double wheel_speed = psi.engine_wheel_ratio * x[kEngine];
  return (wheel_speed - x[kVx]) / std::max(std::abs(x[kVx]), 1.0);
}

inline double stage_cost(const State& x, const Control& u, const TerrainSample& y,
                         const CostToGoField& field, const VehicleParams& psi,
                         const CostConfig& cc) {
  double effort = 0.0;
  for (int c = 0; c < kControlDim; ++c)
    effort += cc.control_weights[c] * u[c] * u[c];
  const double slip = slip_measure(x, psi);
  return track_cost(x, field, cc) + rollover_cost(x, y, psi, cc) + effort +
         cc.slip_weight * slip * slip;
}

struct PlanResult {
  ControlSeq u;
  double best_cost = kInf;
  bool fallback = false;
  int finite_samples = 0;
  std::vector<double> sample_costs;  // filled when collect_costs is set
};

inline ControlSeq braking_sequence(int horizon) {
  Control brake{};
  brake[kBrakeCmd] = 0.8;
  return ControlSeq(horizon, brake);
}

// Core sample-and-blend step over an arbitrary sequence scorer. Weights use
// the cost above the per-call minimum, so adding a constant to every score
// cannot move the result.
template <class ScoreFn>
PlanResult mppi_optimize(const ControlSeq& nominal, const MppiConfig& cfg,
                         std::uint64_t seed, ScoreFn&& score) {
  const int h = int(nominal.size());
  PlanResult out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<ControlSeq> samples(cfg.samples);
  std::vector<double> costs(cfg.samples, kInf);
  for (int i = 0; i < cfg.samples; ++i) {
    ControlSeq& u = samples[i];
    u.resize(h);
    for (int k = 0; k < h; ++k)
      for (int c = 0; c < kControlDim; ++c) {
        const double raw = nominal[k][c] + cfg.noise_std[c] * gauss(rng);
        u[k][c] = std::min(std::max(raw, cfg.u_lo[c]), cfg.u_hi[c]);
      }
    const double j = score(u);
    costs[i] = std::isfinite(j) ? j : kInf;
    if (costs[i] < out.best_cost) out.best_cost = costs[i];
  }
  if (cfg.collect_costs) out.sample_costs = costs;

  for (double j : costs)
    if (std::isfinite(j)) ++out.finite_samples;
  if (out.finite_samples == 0) {
    out.u = braking_sequence(h);
    out.fallback = true;
    return out;
  }

  out.u.assign(h, Control{});
  double wsum = 0.0;
  for (int i = 0; i < cfg.samples; ++i) {
    if (!std::isfinite(costs[i])) continue;
    const double w = std::exp(-(costs[i] - out.best_cost) / cfg.lambda);
    wsum += w;
    for (int k = 0; k < h; ++k)
      for (int c = 0; c < kControlDim; ++c) out.u[k][c] += w * samples[i][k][c];
  }
  for (int k = 0; k < h; ++k)
    for (int c = 0; c < kControlDim; ++c) {
      out.u[k][c] /= wsum;
      out.u[k][c] = std::min(std::max(out.u[k][c], cfg.u_lo[c]), cfg.u_hi[c]);
    }
  return out;
}

struct PlannerModel {
  const NetParams* net = nullptr;
  const Theta* theta = nullptr;
  const VehicleParams* psi = nullptr;
};

// Path cost of one candidate sequence: running stage cost and cost-to-go at
// every step, cost-to-go again at the terminal state. A rollout that leaves
// the finite domain scores infinite and drops out of the blend.
template <class TerrainFn>
double rollout_cost(const State& x0, const ControlSeq& u,
                    const CostToGoField& field, const PlannerModel& model,
                    const MppiConfig& cfg, const CostConfig& cc,
                    TerrainFn&& terrain_at) {
  State x = x0;
  double j = 0.0;
  for (const Control& uk : u) {
    const TerrainSample y = terrain_at(x);
    j += stage_cost(x, uk, y, field, *model.psi, cc) +
         field.value_at(x[kPx], x[kPy]);
    const auto tf = tire_forces<double>(x, y, *model.psi);
    const auto eta = residual_features<double>(x, uk, y, tf);
    const auto zeta = residual_force(*model.net, eta, *model.theta);
    const auto next = step(x, uk, y, *model.psi, zeta, cfg.dt);
    if (!next) return kInf;
    x = *next;
  }
  j += field.value_at(x[kPx], x[kPy]);
  return std::isfinite(j) ? j : kInf;
}

template <class TerrainFn>
PlanResult plan(const State& x0, const ControlSeq& nominal,
                const CostToGoField& field, const PlannerModel& model,
                const MppiConfig& cfg, const CostConfig& cc, std::uint64_t seed,
                TerrainFn&& terrain_at) {
  return mppi_optimize(nominal, cfg, seed, [&](const ControlSeq& u) {
    return rollout_cost(x0, u, field, model, cfg, cc, terrain_at);
  });
}

// Receding-horizon wrapper: replan from the current state, hand the caller
// the whole plan, and keep the shifted sequence as the next nominal.
class Planner {
 public:
  Planner(const MppiConfig& cfg, const CostConfig& cc)
      : cfg_(cfg), cc_(cc), nominal_(cfg.horizon, Control{}) {}

  template <class TerrainFn>
  PlanResult replan(const State& x, const CostToGoField& field,
                    const PlannerModel& model, std::uint64_t seed,
                    TerrainFn&& terrain_at) {
    PlanResult r = plan(x, nominal_, field, model, cfg_, cc_, seed, terrain_at);
    nominal_ = r.u;
    if (!nominal_.empty()) {
      nominal_.erase(nominal_.begin());
      nominal_.push_back(nominal_.back());
    }
    return r;
  }

  void reset() { nominal_.assign(cfg_.horizon, Control{}); }
  const ControlSeq& nominal() const { return nominal_; }
  const MppiConfig& config() const { return cfg_; }
  const CostConfig& cost_config() const { return cc_; }

 private:
  MppiConfig cfg_;
  CostConfig cc_;
  ControlSeq nominal_;
};

}  // namespace metadapt
