#pragma once

// Onboard vehicle model: a planar twin-track with linear tires under a
// friction cap, first-order actuator channels, and terrain entering through
// the measured contact-plane attitude and per-wheel surface normals. One
// Euler step advances pose by rotated body velocities, velocities by the
// rigid-body force balance, and actuator states by their lag dynamics. The
// residual force vector is injected between the tire wrench and the mass
// matrix, so its effect on one step is exactly dt * M^{-1}.

#include <cmath>
#include <optional>

#include "metadapt/ad.hpp"
#include "metadapt/linalg.hpp"
#include "metadapt/vehicle_types.hpp"

namespace metadapt {

// Symmetric saturation; written with min/max so every scalar type works.
template <class S>
S sat(const S& v, const S& lim) {
  using std::max, std::min;
  return min(max(v, -lim), lim);
}

// Wheel order: FL, FR, RL, RR. Positions relative to the reference point.
template <class S>
struct TireForcesT {
  std::array<S, 8> f;   // wheel-frame (longitudinal, lateral) per wheel
  std::array<S, 4> fz;  // vertical loads
  S delta;              // road wheel steer angle
};

template <class S>
TireForcesT<S> tire_forces(const StateT<S>& x, const TerrainSample& y,
                           const VehicleParamsT<S>& p) {
  using std::abs, std::atan, std::cos, std::max, std::sin, std::tanh;
  TireForcesT<S> out;
  out.delta = p.steer_ratio * x[kSteerCol];
  const S cd = cos(out.delta);
  const S sd = sin(out.delta);
  const S wheel_speed = p.engine_wheel_ratio * x[kEngine];
  for (int i = 0; i < 4; ++i) {
    const bool front = i < 2;
    const S px = (front ? 0.5 : -0.5) * p.wheelbase;
    const S py = (i % 2 == 0 ? 0.5 : -0.5) * p.track_width;
    // Contact point velocity, rotated into the wheel frame for the fronts.
    S ux = x[kVx] - x[kYawRate] * py;
    S uy = x[kVy] + x[kYawRate] * px;
    if (front) {
      const S tx = cd * ux + sd * uy;
      uy = cd * uy - sd * ux;
      ux = tx;
    }
    // Vertical load scales with how upright the local surface is; the
    // normal is measured, so a degraded contact shrinks the friction cap.
    const double nz = ad::clamp(y[kNormals + 3 * i + 2], 0.3, 1.0);
    const S fz = (0.25 * kGravity * nz) * p.mass;
    const S cap = p.friction * fz;
    // the speed floor keeps standstill finite and the Euler step well
    // damped at crawl speeds; below it the slip angle just scales away
    const S alpha = atan(uy / max(abs(ux), S(1.5)));
    const S fy = sat(-p.tire_stiffness_lat * alpha, cap);
    // Longitudinal: rear-wheel drive slip, brake, rolling drag. tanh keeps
    // the direction switch smooth near standstill.
    const S dir = tanh(ux * 2.0);
    S fx = -(0.25 * p.brake_gain) * x[kBrake] * dir - p.rolling_resistance * fz * dir;
    if (!front) {
      const S slip = (wheel_speed - ux) / max(abs(ux), S(1.0));
      fx += sat(p.tire_stiffness_long * slip, cap);
    }
    out.f[2 * i] = sat(fx, cap);
    out.f[2 * i + 1] = fy;
    out.fz[i] = fz;
  }
  return out;
}

// Map wheel-frame tire forces into the body wrench [Fx, Fy, Mz].
template <class S>
std::array<S, 3> tire_wrench(const TireForcesT<S>& tf, const VehicleParamsT<S>& p) {
  using std::cos, std::sin;
  const S cd = cos(tf.delta);
  const S sd = sin(tf.delta);
  std::array<S, 3> w{};
  for (int i = 0; i < 4; ++i) {
    const bool front = i < 2;
    const S px = (front ? 0.5 : -0.5) * p.wheelbase;
    const S py = (i % 2 == 0 ? 0.5 : -0.5) * p.track_width;
    const S fxw = tf.f[2 * i];
    const S fyw = tf.f[2 * i + 1];
    const S fxb = front ? cd * fxw - sd * fyw : fxw;
    const S fyb = front ? sd * fxw + cd * fyw : fyw;
    w[0] += fxb;
    w[1] += fyb;
    w[2] += px * fyb - py * fxb;
  }
  return w;
}

// Body-frame accelerations [dvx, dvy, dr]: tire wrench plus residual through
// the mass matrix, then the force-free terms (rotating frame, gravity along
// the measured attitude, quadratic aero drag).
template <class S>
std::array<S, 3> acceleration(const StateT<S>& x, const TerrainSample& y,
                              const VehicleParamsT<S>& p,
                              const std::array<S, 3>& zeta) {
  using std::abs;
  const auto w = tire_wrench(tire_forces(x, y, p), p);
  const double sp = std::sin(y[kPitch]);
  const double sr_cp = std::sin(y[kRoll]) * std::cos(y[kPitch]);
  std::array<S, 3> a;
  a[0] = (w[0] + zeta[0]) / p.mass + x[kYawRate] * x[kVy] - kGravity * sp -
         (p.aero_drag / p.mass) * x[kVx] * abs(x[kVx]);
  a[1] = (w[1] + zeta[1]) / p.mass - x[kYawRate] * x[kVx] - kGravity * sr_cp;
  a[2] = (w[2] + zeta[2]) / p.yaw_inertia;
  return a;
}

// First-order actuator channels. Commands are clamped to their valid boxes
// here so rollouts cannot push the model with out-of-range inputs.
template <class S>
std::array<S, 4> actuator_rates(const StateT<S>& x, const Control& u,
                                const VehicleParamsT<S>& p) {
  const double ut = ad::clamp(u[kThrottle], 0.0, 1.0);
  const double ub = ad::clamp(u[kBrakeCmd], 0.0, 1.0);
  const double us = ad::clamp(u[kSteerCmd], -1.0, 1.0);
  const S col_rate = (p.steer_col_max * us - x[kSteerCol]) / p.steer_tc;
  return {(ub - x[kBrake]) / p.brake_tc, col_rate,
          (col_rate - x[kSteerVel]) / p.steer_vel_tc,
          (p.engine_idle + p.engine_gain * ut - x[kEngine]) / p.engine_tc};
}

template <class S>
StateT<S> step_t(const StateT<S>& x, const Control& u, const TerrainSample& y,
                 const VehicleParamsT<S>& p, const std::array<S, 3>& zeta,
                 double dt) {
  using std::cos, std::sin;
  const auto a = acceleration(x, y, p, zeta);
  const auto zr = actuator_rates(x, u, p);
  const S cy = cos(x[kYaw]);
  const S sy = sin(x[kYaw]);
  StateT<S> n;
  n[kPx] = x[kPx] + dt * (cy * x[kVx] - sy * x[kVy]);
  n[kPy] = x[kPy] + dt * (sy * x[kVx] + cy * x[kVy]);
  n[kYaw] = x[kYaw] + dt * x[kYawRate];
  n[kVx] = x[kVx] + dt * a[0];
  n[kVy] = x[kVy] + dt * a[1];
  n[kYawRate] = x[kYawRate] + dt * a[2];
  n[kBrake] = x[kBrake] + dt * zr[0];
  n[kSteerCol] = x[kSteerCol] + dt * zr[1];
  n[kSteerVel] = x[kSteerVel] + dt * zr[2];
  n[kEngine] = x[kEngine] + dt * zr[3];
  return n;
}

// Plain-double step with a finiteness guard; empty result means the model
// blew up and the caller should treat the rollout as invalid.
inline std::optional<State> step(const State& x, const Control& u,
                                 const TerrainSample& y, const VehicleParams& p,
                                 const std::array<double, 3>& zeta, double dt) {
  State n = step_t<double>(x, u, y, p, zeta, dt);
  for (double v : n)
    if (!std::isfinite(v)) return std::nullopt;
  return n;
}

inline std::optional<State> step_parametric(const State& x, const Control& u,
                                            const TerrainSample& y,
                                            const VehicleParams& p, double dt) {
  return step(x, u, y, p, {0.0, 0.0, 0.0}, dt);
}

// d(next state)/d(state) for one step, with the residual held fixed (its
// dependence on the state is treated as negligible). Templated so the
// training loop can push sensitivities through the entries.
template <class S>
MatX<S> state_jacobian(const StateT<S>& x, const Control& u,
                       const TerrainSample& y, const VehicleParamsT<S>& p,
                       const std::array<S, 3>& zeta, double dt) {
  using D = ad::Dual<S, kStateDim>;
  std::array<D, kStateDim> xd;
  for (int k = 0; k < kStateDim; ++k) xd[k] = D::seeded(x[k], k);
  const VehicleParamsT<D> pd = params_cast<D>(p);
  const std::array<D, 3> zd = {D(zeta[0]), D(zeta[1]), D(zeta[2])};
  const auto xn = step_t<D>(xd, u, y, pd, zd, dt);
  MatX<S> j(kStateDim, kStateDim);
  for (int i = 0; i < kStateDim; ++i)
    for (int k = 0; k < kStateDim; ++k) j(i, k) = xn[i].d[k];
  return j;
}

// Per-channel gain of one step with respect to the residual force: only the
// velocity rows respond, through the mass matrix.
template <class S>
std::array<S, 3> residual_gain(const VehicleParamsT<S>& p, double dt) {
  return {dt / p.mass, dt / p.mass, dt / p.yaw_inertia};
}

}  // namespace metadapt
