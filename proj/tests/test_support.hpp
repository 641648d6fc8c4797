#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <vector>

#include "metadapt/kalman.hpp"

namespace metadapt::testsupport {

// Endpoint of the window rollout with the force patterns pinned to a base
// coefficient trajectory. The sensitivity recursion treats the patterns as
// coefficient-independent along the path (the residual's state dependence
// is neglected), so this frozen map is the object whose Jacobian it
// computes exactly; finite differences must be taken on it, not on the
// fully coupled rollout.
inline State frozen_pattern_endpoint(const NetParams& np, const VehicleParams& psi,
                                     const Theta& base, const Theta& eval,
                                     const State& x0, const std::vector<Control>& u,
                                     const std::vector<TerrainSample>& y, double dt) {
  // Pass 1: record the pattern matrices along the base-coefficient path.
  std::vector<MatX<double>> gs;
  gs.reserve(u.size());
  State xb = x0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const auto tf = tire_forces<double>(xb, y[k], psi);
    const auto eta = residual_features<double>(xb, u[k], y[k], tf);
    gs.push_back(residual_mix(np, residual_basis(np, eta)));
    const auto zeta = residual_force_from_mix(np, gs.back(), base);
    xb = step_t<double>(xb, u[k], y[k], psi, {zeta[0], zeta[1], zeta[2]}, dt);
  }
  // Pass 2: rollout with frozen patterns and the evaluation coefficients.
  State xe = x0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const auto zeta = residual_force_from_mix(np, gs[k], eval);
    xe = step_t<double>(xe, u[k], y[k], psi, {zeta[0], zeta[1], zeta[2]}, dt);
  }
  return xe;
}

}  // namespace metadapt::testsupport
