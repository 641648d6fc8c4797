#pragma once

// Online adaptation of the fast residual coefficients. Between control
// cycles the model prediction is rolled forward from the last measured
// state while a sensitivity recursion accumulates how the prediction end
// point responds to the coefficients; the velocity-channel innovation then
// drives a Kalman-style update with a random-walk prior. A speed gate
// freezes the coefficients near standstill where the channels carry no
// excitation, and a divergence guard resets the filter outright rather
// than letting a blown-up estimate poison the controller.

#include <cmath>
#include <vector>

#include "metadapt/dynamics.hpp"
#include "metadapt/linalg.hpp"
#include "metadapt/network.hpp"

namespace metadapt {

inline constexpr double kThetaNormLimit = 1e3;

template <class S>
struct FilterParamsT {
  VecX<S> p0;  // initial coefficient variance, diagonal
  VecX<S> q;   // per-cycle random-walk variance, diagonal
  MatX<S> r;   // velocity-channel measurement covariance, 3x3
  S eps;       // speed gate scale, (m/s)^2
};
using FilterParams = FilterParamsT<double>;

template <class T, class S>
FilterParamsT<T> filter_cast(const FilterParamsT<S>& src) {
  FilterParamsT<T> dst;
  dst.p0 = VecX<T>(src.p0.size());
  dst.q = VecX<T>(src.q.size());
  for (int i = 0; i < src.p0.size(); ++i) dst.p0[i] = T(src.p0[i]);
  for (int i = 0; i < src.q.size(); ++i) dst.q[i] = T(src.q[i]);
  dst.r = MatX<T>(src.r.rows(), src.r.cols());
  for (int i = 0; i < src.r.rows(); ++i)
    for (int j = 0; j < src.r.cols(); ++j) dst.r(i, j) = T(src.r(i, j));
  dst.eps = T(src.eps);
  return dst;
}

// Hand-set starting point; training refines every entry. Blend weights are
// dimensionless and move slowly; channel biases are in newtons (torque for
// the yaw channel) and are allowed to wander far.
inline FilterParams default_filter_params(int n_mix) {
  const int n = n_mix + kResidualDim;
  FilterParams fp;
  fp.p0 = VecX<double>(n);
  fp.q = VecX<double>(n);
  for (int k = 0; k < n_mix; ++k) {
    fp.p0[k] = 0.09;
    fp.q[k] = 1e-4;
  }
  fp.p0[n_mix + 0] = 160000.0;
  fp.p0[n_mix + 1] = 160000.0;
  fp.p0[n_mix + 2] = 62500.0;
  fp.q[n_mix + 0] = 100.0;
  fp.q[n_mix + 1] = 100.0;
  fp.q[n_mix + 2] = 40.0;
  fp.r = MatX<double>(3, 3);
  fp.r(0, 0) = 0.01;
  fp.r(1, 1) = 0.01;
  fp.r(2, 2) = 0.004;
  fp.eps = 0.25;
  return fp;
}

template <class S>
struct AdaptStateT {
  ThetaT<S> theta;
  MatX<S> p;
};
using AdaptState = AdaptStateT<double>;

template <class S>
AdaptStateT<S> init_adapt_state(const FilterParamsT<S>& fp) {
  const int n = fp.p0.size();
  AdaptStateT<S> st;
  st.theta.assign(n, S(0.0));
  st.p = MatX<S>(n, n);
  for (int i = 0; i < n; ++i) st.p(i, i) = fp.p0[i];
  return st;
}

// Coefficient updates are worthless without lateral/longitudinal
// excitation; the gate vanishes at standstill and saturates at speed.
template <class S>
S speed_gate(double speed_sq, const S& eps) {
  return speed_sq / (speed_sq + eps);
}

// Roll the model forward over a window while accumulating the sensitivity
// of the running state to the fast coefficients. The state Jacobian holds
// the residual fixed (its state dependence is neglected); the coefficient
// block enters through the mass matrix each step.
template <class S>
struct Propagation {
  StateT<S> x_end;
  MatX<S> sens;  // kStateDim x theta_dim
};

template <class S>
Propagation<S> multi_step_jacobian(const NetParamsT<S>& np,
                                   const VehicleParamsT<S>& psi,
                                   const ThetaT<S>& theta, const StateT<S>& x0,
                                   const std::vector<Control>& u,
                                   const std::vector<TerrainSample>& y,
                                   double dt) {
  const int n = np.theta_dim();
  Propagation<S> out;
  out.x_end = x0;
  out.sens = MatX<S>(kStateDim, n);
  const auto gain = residual_gain(psi, dt);
  for (std::size_t k = 0; k < u.size(); ++k) {
    const auto tf = tire_forces<S>(out.x_end, y[k], psi);
    const auto eta = residual_features<S>(out.x_end, u[k], y[k], tf);
    const auto g = residual_mix(np, residual_basis(np, eta));
    const auto jz = residual_theta_jacobian_from_mix(np, g);
    const auto zeta = residual_force_from_mix(np, g, theta);
    const MatX<S> fx = state_jacobian<S>(out.x_end, u[k], y[k], psi, zeta, dt);
    MatX<S> next = matmul(fx, out.sens);
    for (int c = 0; c < kResidualDim; ++c)
      for (int j = 0; j < n; ++j) next(kVx + c, j) += gain[c] * jz(c, j);
    out.sens = next;
    out.x_end = step_t<S>(out.x_end, u[k], y[k], psi, zeta, dt);
  }
  return out;
}

// One measurement update, generic in the measurement and coefficient
// counts. Returns the coefficient correction for the given innovation and
// the symmetrized posterior covariance.
template <class S>
struct KalmanResult {
  VecX<S> dtheta;
  MatX<S> p;
  bool ok = true;
};

template <class S>
KalmanResult<S> kalman_update(const MatX<S>& ch, const MatX<S>& pbar,
                              const MatX<S>& r, const VecX<S>& innovation) {
  const int m = ch.rows();
  const int n = ch.cols();
  KalmanResult<S> out;
  const MatX<S> cp = matmul(ch, pbar);
  const MatX<S> smat = matmul(cp, transpose(ch)) + r;
  MatX<S> kt;  // m x n, the gain transposed
  if (!solve_spd(smat, cp, &kt)) {
    out.ok = false;
    out.dtheta = VecX<S>(n);
    out.p = pbar;
    return out;
  }
  out.dtheta = VecX<S>(n);
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < m; ++c) out.dtheta[j] += kt(c, j) * innovation[c];
  MatX<S> p = pbar - matmul(transpose(kt), cp);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const S avg = (p(i, j) + p(j, i)) * 0.5;
      p(i, j) = avg;
      p(j, i) = avg;
    }
  out.p = p;
  return out;
}

// Logged data for one adaptation cycle: measured start state, the controls
// and terrain samples applied over the window, measured end state.
struct WindowData {
  State x0;
  std::vector<Control> u;
  std::vector<TerrainSample> y;
  State x1;
};

struct WindowDiag {
  double gamma = 0.0;
  double innovation_norm = 0.0;
  double trace_p = 0.0;
  bool reset = false;
  bool ok = true;
  State prediction{};
};

template <class S>
WindowDiag adapt_window(const NetParamsT<S>& np, const VehicleParamsT<S>& psi,
                        const FilterParamsT<S>& fp, double beta, double dt,
                        const WindowData& w, AdaptStateT<S>* st,
                        bool use_gate = true) {
  WindowDiag diag;
  const int n = np.theta_dim();
  if (beta != 1.0)
    for (auto& t : st->theta) t = t * beta;

  MatX<S> pbar = st->p;
  for (int i = 0; i < n; ++i) pbar(i, i) += fp.q[i];

  StateT<S> x0;
  for (int i = 0; i < kStateDim; ++i) x0[i] = S(w.x0[i]);
  const auto prop = multi_step_jacobian(np, psi, st->theta, x0, w.u, w.y, dt);

  MatX<S> ch(kResidualDim, n);
  for (int c = 0; c < kResidualDim; ++c)
    for (int j = 0; j < n; ++j) ch(c, j) = prop.sens(kVx + c, j);
  VecX<S> e(kResidualDim);
  for (int c = 0; c < kResidualDim; ++c)
    e[c] = w.x1[kVx + c] - prop.x_end[kVx + c];

  const auto up = kalman_update(ch, pbar, fp.r, e);
  const double spd2 =
      w.x1[kVx] * w.x1[kVx] + w.x1[kVy] * w.x1[kVy];
  const S gamma = use_gate ? speed_gate(spd2, fp.eps) : S(1.0);
  diag.ok = up.ok;
  if (up.ok) {
    for (int j = 0; j < n; ++j) st->theta[j] += gamma * up.dtheta[j];
    st->p = up.p;
  } else {
    st->p = pbar;
  }

  diag.gamma = ad::value_of(gamma);
  diag.innovation_norm = norm_value(e);
  for (int i = 0; i < kStateDim; ++i)
    diag.prediction[i] = ad::value_of(prop.x_end[i]);
  double tr = 0.0, tn2 = 0.0;
  bool bad = false;
  for (int i = 0; i < n; ++i) {
    tr += ad::value_of(st->p(i, i));
    const double t = ad::value_of(st->theta[i]);
    tn2 += t * t;
    for (int j = 0; j < n; ++j)
      if (!std::isfinite(ad::value_of(st->p(i, j)))) bad = true;
  }
  diag.trace_p = tr;
  if (!std::isfinite(tn2) || std::sqrt(tn2) > kThetaNormLimit || bad) {
    *st = init_adapt_state(fp);
    diag.reset = true;
  }
  return diag;
}

}  // namespace metadapt
