#pragma once

// Adaptation-unrolled prediction loss for one trajectory segment: run the
// coefficient filter over the leading stretch exactly as it runs online,
// freeze the resulting coefficients, roll the model out open-loop over the
// prediction stretch, and score the weighted mean squared state error.
// Everything is templated on the scalar so the training loop can push
// reverse-mode gradients through the whole procedure.

#include <cassert>

#include "metadapt/kalman.hpp"
#include "metadapt/segments.hpp"

namespace metadapt {

// Squared-error weights over the state: pose and body velocities count
// (angles weighted up to balance radians against meters), actuator
// internals are excluded, matching what the measurement picks out.
inline constexpr std::array<double, kStateDim> kLossWeights = {
    1.0, 1.0, 2.0, 1.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0};

struct SegmentLossOptions {
  double dt = 0.02;
  int h = 10;  // steps per adaptation cycle
  double beta = 0.995;
  bool adapt = true;     // false: coefficients stay zero (pretraining mode)
  bool use_gate = true;  // false: gate pinned to 1 (isolates the gate's input)
  double ceiling = 1e4;  // cap for diverged rollouts; keeps batches alive
};

template <class S>
S segment_loss(const TrajectorySegment& seg, const NetParamsT<S>& np,
               const VehicleParamsT<S>& psi, const FilterParamsT<S>& fp,
               const SegmentLossOptions& opt, bool* diverged_out = nullptr) {
  assert(seg.tau % opt.h == 0);
  assert(int(seg.x.size()) == seg.tau + seg.horizon + 1);

  AdaptStateT<S> st = init_adapt_state(fp);
  if (opt.adapt) {
    for (int k = 0; k + opt.h <= seg.tau; k += opt.h) {
      WindowData w;
      w.x0 = seg.x[k];
      w.u.assign(seg.u.begin() + k, seg.u.begin() + k + opt.h);
      w.y.assign(seg.y.begin() + k, seg.y.begin() + k + opt.h);
      w.x1 = seg.x[k + opt.h];
      adapt_window(np, psi, fp, opt.beta, opt.dt, w, &st, opt.use_gate);
    }
  }

  StateT<S> xh;
  for (int i = 0; i < kStateDim; ++i) xh[i] = S(seg.x[seg.tau][i]);
  S acc{};
  bool diverged = false;
  for (int k = 0; k < seg.horizon && !diverged; ++k) {
    const int idx = seg.tau + k;
    const auto tf = tire_forces<S>(xh, seg.y[idx], psi);
    const auto eta = residual_features<S>(xh, seg.u[idx], seg.y[idx], tf);
    const auto zeta = residual_force(np, eta, st.theta);
    xh = step_t<S>(xh, seg.u[idx], seg.y[idx], psi, zeta, opt.dt);
    for (int i = 0; i < kStateDim; ++i)
      if (!std::isfinite(ad::value_of(xh[i]))) diverged = true;
    if (diverged) break;
    const State& gt = seg.x[idx + 1];
    for (int c = 0; c < kStateDim; ++c) {
      if (kLossWeights[c] == 0.0) continue;
      const S d = (c == kYaw) ? ad::wrap_angle(xh[c] - gt[c]) : xh[c] - gt[c];
      acc += kLossWeights[c] * (d * d);
    }
  }
  S loss = acc * (1.0 / seg.horizon);
  if (diverged || !(ad::value_of(loss) < opt.ceiling)) {
    loss = S(opt.ceiling);
    diverged = true;
  }
  if (diverged_out) *diverged_out = diverged;
  return loss;
}

}  // namespace metadapt
