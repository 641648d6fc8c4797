#pragma once

// State, control, and terrain-measurement layouts shared by the model,
// filter, controller, and simulator. Body frame: x forward, y left, z up.

#include <array>
#include <vector>

#include "metadapt/ad.hpp"

namespace metadapt {

inline constexpr double kGravity = 9.81;

inline constexpr int kStateDim = 10;
inline constexpr int kControlDim = 3;
inline constexpr int kTerrainDim = 14;

// State layout: world pose, body-frame velocities, actuator internals.
inline constexpr int kPx = 0;
inline constexpr int kPy = 1;
inline constexpr int kYaw = 2;
inline constexpr int kVx = 3;
inline constexpr int kVy = 4;
inline constexpr int kYawRate = 5;
inline constexpr int kBrake = 6;     // brake position, 0..1
inline constexpr int kSteerCol = 7;  // steering column angle, rad
inline constexpr int kSteerVel = 8;  // filtered column rate, rad/s
inline constexpr int kEngine = 9;    // engine speed, rad/s

// Control layout.
inline constexpr int kThrottle = 0;  // 0..1
inline constexpr int kBrakeCmd = 1;  // 0..1
inline constexpr int kSteerCmd = 2;  // -1..1

// Terrain sample layout: body roll and pitch of the contact plane, then a
// unit surface normal per wheel (FL, FR, RL, RR), world frame, z up.
inline constexpr int kRoll = 0;
inline constexpr int kPitch = 1;
inline constexpr int kNormals = 2;

template <class S>
using StateT = std::array<S, kStateDim>;
using State = StateT<double>;
using Control = std::array<double, kControlDim>;
using TerrainSample = std::array<double, kTerrainDim>;

inline TerrainSample flat_terrain() {
  TerrainSample y{};
  for (int i = 0; i < 4; ++i) y[kNormals + 3 * i + 2] = 1.0;
  return y;
}

// Physical parameters of the onboard model. Templated so the training loop
// can differentiate through them; plain doubles everywhere else.
template <class S>
struct VehicleParamsT {
  S mass{};                 // kg
  S yaw_inertia{};          // kg m^2
  S wheelbase{};            // m
  S track_width{};          // m
  S cg_height{};            // m, above contact plane
  S tire_stiffness_long{};  // N per unit slip, per wheel
  S tire_stiffness_lat{};   // N per rad, per wheel
  S rolling_resistance{};   // dimensionless, of vertical load
  S aero_drag{};            // N per (m/s)^2
  S friction{};             // assumed tire-ground friction coefficient
  S brake_gain{};           // N at full application, all wheels combined
  S brake_tc{};             // s
  S steer_tc{};             // s
  S steer_vel_tc{};         // s
  S engine_tc{};            // s
  S engine_idle{};          // rad/s
  S engine_gain{};          // rad/s added at full throttle
  S engine_wheel_ratio{};   // m of wheel travel per rad of engine
  S steer_col_max{};        // rad of column at full steer command
  S steer_ratio{};          // road wheel rad per column rad
};
using VehicleParams = VehicleParamsT<double>;

// Single canonical field walk; serialization, casting, and the optimizer
// all reuse it so the field order can never disagree.
template <class P, class F>
void visit_params(P& p, F&& f) {
  f("mass", p.mass);
  f("yaw_inertia", p.yaw_inertia);
  f("wheelbase", p.wheelbase);
  f("track_width", p.track_width);
  f("cg_height", p.cg_height);
  f("tire_stiffness_long", p.tire_stiffness_long);
  f("tire_stiffness_lat", p.tire_stiffness_lat);
  f("rolling_resistance", p.rolling_resistance);
  f("aero_drag", p.aero_drag);
  f("friction", p.friction);
  f("brake_gain", p.brake_gain);
  f("brake_tc", p.brake_tc);
  f("steer_tc", p.steer_tc);
  f("steer_vel_tc", p.steer_vel_tc);
  f("engine_tc", p.engine_tc);
  f("engine_idle", p.engine_idle);
  f("engine_gain", p.engine_gain);
  f("engine_wheel_ratio", p.engine_wheel_ratio);
  f("steer_col_max", p.steer_col_max);
  f("steer_ratio", p.steer_ratio);
}

inline constexpr int kVehicleParamCount = 20;

template <class T, class S>
VehicleParamsT<T> params_cast(const VehicleParamsT<S>& src) {
  std::vector<const S*> vals;
  visit_params(src, [&](const char*, const S& v) { vals.push_back(&v); });
  VehicleParamsT<T> dst;
  int k = 0;
  visit_params(dst, [&](const char*, T& v) { v = T(*vals[k++]); });
  return dst;
}

template <class S>
VehicleParams params_value(const VehicleParamsT<S>& src) {
  std::vector<double> vals;
  visit_params(src, [&](const char*, const S& v) { vals.push_back(ad::value_of(v)); });
  VehicleParams dst;
  int k = 0;
  visit_params(dst, [&](const char*, double& v) { v = vals[k++]; });
  return dst;
}

// Nominal parameter set used by the onboard model before any learning.
inline VehicleParams onboard_params() {
  VehicleParams p;
  p.mass = 900.0;
  p.yaw_inertia = 850.0;
  p.wheelbase = 2.7;
  p.track_width = 1.6;
  p.cg_height = 0.7;
  p.tire_stiffness_long = 15000.0;
  p.tire_stiffness_lat = 11000.0;
  p.rolling_resistance = 0.015;
  p.aero_drag = 1.2;
  p.friction = 0.9;
  p.brake_gain = 8000.0;
  p.brake_tc = 0.15;
  p.steer_tc = 0.18;
  p.steer_vel_tc = 0.1;
  p.engine_tc = 0.35;
  p.engine_idle = 80.0;
  p.engine_gain = 520.0;
  p.engine_wheel_ratio = 0.033;
  p.steer_col_max = 7.0;
  p.steer_ratio = 0.06;
  return p;
}

}  // namespace metadapt
