#pragma once

// Ground-truth vehicle: a kinematic-dynamic bicycle with saturating tire
// curves, map-dependent friction, slope-projected gravity, and its own
// actuator lags. Deliberately a different model family from the onboard
// twin-track so closed-loop prediction error is earned, not granted; the
// data-generation preset differs again so deployment physics are held out.

#include <algorithm>
#include <cmath>

#include "metadapt/terrain.hpp"
#include "metadapt/vehicle_types.hpp"

namespace metadapt {

struct SimParams {
  double mass;            // kg
  double yaw_inertia;     // kg m^2
  double lf;              // cg to front axle, m
  double lr;              // cg to rear axle, m
  double track_width;     // m, metrics only (the planar model has no width)
  double cg_height;       // m, metrics only
  double tire_b;          // lateral curve stiffness factor
  double tire_c;          // lateral curve shape factor
  double drive_stiffness; // N per unit longitudinal slip, rear axle
  double grip_scale;      // multiplies the map friction coefficient
  double rolling_resistance;
  double aero_drag;       // N per (m/s)^2
  double brake_gain;      // N at full application, both axles combined
  double brake_front_share;
  double brake_tc;        // s
  double steer_tc;        // s
  double steer_vel_tc;    // s
  double engine_tc;       // s
  double engine_gain;     // rad/s at full throttle, no idle: released
                          // throttle spins the drivetrain down
  double engine_wheel_ratio;  // m of wheel travel per rad of engine
  double steer_col_max;       // rad of column at full steer command
  double steer_ratio;         // road wheel rad per column rad
  double blend_speed;         // m/s, below it the kinematic solution takes over
};

// Physics the evaluation episodes run on.
inline SimParams deploy_sim_params() {
  SimParams p;
  p.mass = 1080.0;
  p.yaw_inertia = 1150.0;
  p.lf = 1.25;
  p.lr = 1.55;
  p.track_width = 1.62;
  p.cg_height = 0.75;
  p.tire_b = 5.5;
  p.tire_c = 1.35;
  p.drive_stiffness = 28000.0;
  p.grip_scale = 0.85;
  p.rolling_resistance = 0.02;
  p.aero_drag = 2.2;
  p.brake_gain = 7000.0;
  p.brake_front_share = 0.55;
  p.brake_tc = 0.22;
  p.steer_tc = 0.28;
  p.steer_vel_tc = 0.15;
  p.engine_tc = 0.55;
  p.engine_gain = 470.0;
  p.engine_wheel_ratio = 0.036;
  p.steer_col_max = 7.0;
  p.steer_ratio = 0.052;
  p.blend_speed = 1.5;
  return p;
}

// Physics the training runs are collected on: a lighter, quicker build of
// the same platform, the way a fleet's test mule differs from the fielded
// vehicle. Every constant differs from the deployment preset so deployment
// physics stay held out, but the mismatch against the onboard model points
// the same way in both worlds, so corrections learned offline keep their
// sign at deployment and only their magnitude is left to adapt online.
inline SimParams datagen_sim_params() {
  SimParams p;
  p.mass = 1020.0;
  p.yaw_inertia = 1030.0;
  p.lf = 1.27;
  p.lr = 1.51;
  p.track_width = 1.61;
  p.cg_height = 0.73;
  p.tire_b = 6.2;
  p.tire_c = 1.38;
  p.drive_stiffness = 30000.0;
  p.grip_scale = 0.88;
  p.rolling_resistance = 0.018;
  p.aero_drag = 1.8;
  p.brake_gain = 7400.0;
  p.brake_front_share = 0.57;
  p.brake_tc = 0.19;
  p.steer_tc = 0.24;
  p.steer_vel_tc = 0.13;
  p.engine_tc = 0.46;
  p.engine_gain = 490.0;
  p.engine_wheel_ratio = 0.035;
  p.steer_col_max = 7.0;
  p.steer_ratio = 0.055;
  p.blend_speed = 1.5;
  return p;
}

// True state shares the onboard layout: the mismatch between the worlds
// lives entirely in the dynamics, never in the representation, so measured
// states need no conversion.
struct SimState {
  State x{};
  double t = 0.0;
};

inline SimState sim_start(const State& x0) { return SimState{x0, 0.0}; }

// One 50 Hz truth step. Planar bicycle: axle slip angles feed saturating
// lateral curves, the rear axle drives through longitudinal slip, and both
// axles live under a friction ellipse at mu(position) * load. Below the
// blend speed the lateral states relax onto the kinematic solution, which
// keeps slow maneuvers well posed.
inline SimState sim_step(const SimState& s, const Control& u,
                         const TerrainMap& map, const SimParams& p,
                         double dt) {
  const State& x = s.x;
  const double wb = p.lf + p.lr;

  double mu = 0.7, pitch = 0.0, roll = 0.0;
  if (map.height.inside_world(x[kPx], x[kPy])) {
    const GroundPose g = ground_pose(map, x[kPx], x[kPy], x[kYaw]);
    mu = g.mu;
    pitch = g.pitch;
    roll = g.roll;
  }
  mu *= p.grip_scale;

  const double delta = p.steer_ratio * x[kSteerCol];
  const double cd = std::cos(delta), sd = std::sin(delta);
  const double fz_f = p.mass * kGravity * p.lr / wb;
  const double fz_r = p.mass * kGravity * p.lf / wb;

  // axle slip angles, velocity-guarded: the floor keeps standstill finite
  // and keeps the 50 Hz step well damped at crawl speeds, where the raw
  // relaxation rate would otherwise cross the explicit-Euler ringing bound
  const double vg = std::max(std::abs(x[kVx]), p.blend_speed);
  const double alpha_f = std::atan((x[kVy] + p.lf * x[kYawRate]) / vg) - delta;
  const double alpha_r = std::atan((x[kVy] - p.lr * x[kYawRate]) / vg);
  double fy_f = -mu * fz_f * std::sin(p.tire_c * std::atan(p.tire_b * alpha_f));
  double fy_r = -mu * fz_r * std::sin(p.tire_c * std::atan(p.tire_b * alpha_r));

  // longitudinal: rear drive slip, brakes split across axles, rolling drag;
  // the direction switch is smooth so standstill does not chatter
  const double dir = std::tanh(2.0 * x[kVx]);
  const double wheel_speed = p.engine_wheel_ratio * x[kEngine];
  const double slip = (wheel_speed - x[kVx]) / std::max(std::abs(x[kVx]), 1.0);
  const double fb = p.brake_gain * ad::clamp(x[kBrake], 0.0, 1.0) * dir;
  double fx_f = -p.brake_front_share * fb - p.rolling_resistance * fz_f * dir;
  double fx_r = p.drive_stiffness * slip -
                (1.0 - p.brake_front_share) * fb -
                p.rolling_resistance * fz_r * dir;

  // friction ellipse per axle: the ground cannot return more than mu * load
  const auto ellipse = [](double cap, double* fx, double* fy) {
    const double f = std::hypot(*fx, *fy);
    if (f > cap) {
      const double sc = cap / f;
      *fx *= sc;
      *fy *= sc;
    }
  };
  ellipse(mu * fz_f, &fx_f, &fy_f);
  ellipse(mu * fz_r, &fx_r, &fy_r);

  // body wrench; front axle forces rotate through the wheel angle
  const double fxb = fx_f * cd - fy_f * sd + fx_r;
  const double fyb = fy_f * cd + fx_f * sd + fy_r;
  const double mz = p.lf * (fy_f * cd + fx_f * sd) - p.lr * fy_r;

  const double ax = fxb / p.mass + x[kYawRate] * x[kVy] -
                    kGravity * std::sin(pitch) -
                    (p.aero_drag / p.mass) * x[kVx] * std::abs(x[kVx]);
  const double ay = fyb / p.mass - x[kYawRate] * x[kVx] -
                    kGravity * std::sin(roll) * std::cos(pitch);
  const double rdot = mz / p.yaw_inertia;

  const double ut = ad::clamp(u[kThrottle], 0.0, 1.0);
  const double ub = ad::clamp(u[kBrakeCmd], 0.0, 1.0);
  const double us = ad::clamp(u[kSteerCmd], -1.0, 1.0);
  const double col_rate = (p.steer_col_max * us - x[kSteerCol]) / p.steer_tc;

  SimState n;
  n.t = s.t + dt;
  const double cy = std::cos(x[kYaw]), sy = std::sin(x[kYaw]);
  n.x[kPx] = x[kPx] + dt * (cy * x[kVx] - sy * x[kVy]);
  n.x[kPy] = x[kPy] + dt * (sy * x[kVx] + cy * x[kVy]);
  n.x[kYaw] = x[kYaw] + dt * x[kYawRate];
  n.x[kVx] = x[kVx] + dt * ax;
  n.x[kVy] = x[kVy] + dt * ay;
  n.x[kYawRate] = x[kYawRate] + dt * rdot;
  n.x[kBrake] = x[kBrake] + dt * (ub - x[kBrake]) / p.brake_tc;
  n.x[kSteerCol] = x[kSteerCol] + dt * col_rate;
  n.x[kSteerVel] = x[kSteerVel] + dt * (col_rate - x[kSteerVel]) / p.steer_vel_tc;
  n.x[kEngine] = x[kEngine] + dt * (p.engine_gain * ut - x[kEngine]) / p.engine_tc;

  // kinematic-dynamic blend on the lateral states
  const double b = ad::clamp(n.x[kVx] / p.blend_speed, 0.0, 1.0);
  if (b < 1.0) {
    const double r_kin = n.x[kVx] * std::tan(delta) / wb;
    n.x[kYawRate] = b * n.x[kYawRate] + (1.0 - b) * r_kin;
    n.x[kVy] = b * n.x[kVy] + (1.0 - b) * r_kin * p.lr;
  }
  return n;
}

// Load-transfer proxy on the true vehicle, for rollover metrics: the same
// left/right split the planner penalizes, evaluated with the simulator's
// geometry and the true ground attitude.
inline double sim_min_wheel_loading(const State& x, double ground_roll,
                                    const SimParams& p) {
  const double delta = p.steer_ratio * x[kSteerCol];
  const double a_lat = x[kVx] * x[kVx] * std::tan(delta) / (p.lf + p.lr);
  const double shift = (p.cg_height / p.track_width) *
                       (a_lat / kGravity + std::tan(ground_roll));
  const double left = ad::clamp(0.5 - shift, 0.0, 1.0);
  const double right = ad::clamp(0.5 + shift, 0.0, 1.0);
  return std::min(left, right);
}

}  // namespace metadapt
