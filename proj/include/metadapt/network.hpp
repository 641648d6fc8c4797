#pragma once

// Learned residual force head. A small tanh network maps the standardized
// situation vector (state, control, terrain, tire forces) to a feature
// basis; a fixed mixing tensor turns the basis into a bank of candidate
// force patterns; the fast-adapted coefficients blend those patterns and
// shift the output. The output is affine in the fast coefficients by
// construction, which the online filter relies on.

#include <cstdint>
#include <random>
#include <vector>

#include "metadapt/dynamics.hpp"
#include "metadapt/linalg.hpp"
#include "metadapt/vehicle_types.hpp"

namespace metadapt {

inline constexpr int kFeatureDim = kStateDim + kControlDim + kTerrainDim + 8;
inline constexpr int kResidualDim = 3;  // body-frame [Fx, Fy, Mz]

template <class S>
using ThetaT = std::vector<S>;
using Theta = ThetaT<double>;

// Slow parameters: feature network, mixing tensor, and the slow half of the
// output blend. The fast coefficient vector has n_mix + 3 entries (one
// blend weight per pattern, one bias per output channel).
template <class S>
struct NetParamsT {
  int hidden = 32;
  int n_mix = 8;
  std::vector<S> w1, b1;  // hidden x kFeatureDim, hidden
  std::vector<S> w2, b2;  // hidden x hidden, hidden
  std::vector<S> mix;     // n_mix x kResidualDim x hidden
  std::vector<S> head_w;  // n_mix
  std::vector<S> head_b;  // kResidualDim

  int theta_dim() const { return n_mix + kResidualDim; }
};
using NetParams = NetParamsT<double>;

template <class P, class F>
void visit_net_params(P& np, F&& f) {
  f("w1", np.w1);
  f("b1", np.b1);
  f("w2", np.w2);
  f("b2", np.b2);
  f("mix", np.mix);
  f("head_w", np.head_w);
  f("head_b", np.head_b);
}

template <class T, class S>
NetParamsT<T> net_cast(const NetParamsT<S>& src) {
  NetParamsT<T> dst;
  dst.hidden = src.hidden;
  dst.n_mix = src.n_mix;
  std::vector<const std::vector<S>*> vs;
  visit_net_params(src, [&](const char*, const std::vector<S>& v) { vs.push_back(&v); });
  int k = 0;
  visit_net_params(dst, [&](const char*, std::vector<T>& v) {
    const auto& s = *vs[k++];
    v.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) v[i] = T(s[i]);
  });
  return dst;
}

template <class S>
NetParams net_value(const NetParamsT<S>& src) {
  NetParams dst;
  dst.hidden = src.hidden;
  dst.n_mix = src.n_mix;
  std::vector<const std::vector<S>*> vs;
  visit_net_params(src, [&](const char*, const std::vector<S>& v) { vs.push_back(&v); });
  int k = 0;
  visit_net_params(dst, [&](const char*, std::vector<double>& v) {
    const auto& s = *vs[k++];
    v.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) v[i] = ad::value_of(s[i]);
  });
  return dst;
}

// Fixed normalization of the situation vector. These are operating-range
// constants of the platform, not learned quantities.
struct FeatureScaling {
  std::array<double, kFeatureDim> offset;
  std::array<double, kFeatureDim> scale;
};

inline const FeatureScaling& feature_scaling() {
  static const FeatureScaling fs = [] {
    FeatureScaling f{};
    auto set = [&](int i, double off, double sc) {
      f.offset[i] = off;
      f.scale[i] = sc;
    };
    set(kPx, 0.0, 100.0);
    set(kPy, 0.0, 100.0);
    set(kYaw, 0.0, 3.14159265358979);
    set(kVx, 3.0, 5.0);
    set(kVy, 0.0, 1.0);
    set(kYawRate, 0.0, 1.0);
    set(kBrake, 0.5, 0.5);
    set(kSteerCol, 0.0, 3.5);
    set(kSteerVel, 0.0, 5.0);
    set(kEngine, 300.0, 250.0);
    int k = kStateDim;
    set(k++, 0.5, 0.5);  // throttle
    set(k++, 0.5, 0.5);  // brake command
    set(k++, 0.0, 1.0);  // steer command
    set(k++, 0.0, 0.15);  // roll
    set(k++, 0.0, 0.15);  // pitch
    for (int w = 0; w < 4; ++w) {
      set(k++, 0.0, 0.2);
      set(k++, 0.0, 0.2);
      set(k++, 1.0, 0.1);  // normal z hovers near 1
    }
    for (int i = 0; i < 8; ++i) set(k++, 0.0, 1500.0);  // tire forces, N
    return f;
  }();
  return fs;
}

template <class S>
std::array<S, kFeatureDim> residual_features(const StateT<S>& x, const Control& u,
                                             const TerrainSample& y,
                                             const TireForcesT<S>& tf) {
  const FeatureScaling& fs = feature_scaling();
  std::array<S, kFeatureDim> eta;
  int k = 0;
  for (int i = 0; i < kStateDim; ++i)
    eta[k++] = (i == kYaw) ? ad::wrap_angle(x[i]) : x[i];
  for (int i = 0; i < kControlDim; ++i) eta[k++] = S(u[i]);
  for (int i = 0; i < kTerrainDim; ++i) eta[k++] = S(y[i]);
  for (int i = 0; i < 8; ++i) eta[k++] = tf.f[i];
  for (int i = 0; i < kFeatureDim; ++i)
    eta[i] = (eta[i] - fs.offset[i]) * (1.0 / fs.scale[i]);
  return eta;
}

// Two tanh layers; the second activation vector is the feature basis.
template <class S>
std::vector<S> residual_basis(const NetParamsT<S>& np,
                              const std::array<S, kFeatureDim>& eta) {
  using std::tanh;
  const int h = np.hidden;
  std::vector<S> h1(h);
  for (int i = 0; i < h; ++i) {
    S acc = np.b1[i];
    for (int j = 0; j < kFeatureDim; ++j) acc += np.w1[i * kFeatureDim + j] * eta[j];
    h1[i] = tanh(acc);
  }
  std::vector<S> h2(h);
  for (int i = 0; i < h; ++i) {
    S acc = np.b2[i];
    for (int j = 0; j < h; ++j) acc += np.w2[i * h + j] * h1[j];
    h2[i] = tanh(acc);
  }
  return h2;
}

// Candidate force patterns: row k is the k-th pattern over output channels.
template <class S>
MatX<S> residual_mix(const NetParamsT<S>& np, const std::vector<S>& basis) {
  MatX<S> g(np.n_mix, kResidualDim);
  for (int k = 0; k < np.n_mix; ++k)
    for (int o = 0; o < kResidualDim; ++o) {
      S acc{};
      const int base = (k * kResidualDim + o) * np.hidden;
      for (int i = 0; i < np.hidden; ++i) acc += np.mix[base + i] * basis[i];
      g(k, o) = acc;
    }
  return g;
}

template <class S>
std::array<S, kResidualDim> residual_force_from_mix(const NetParamsT<S>& np,
                                                    const MatX<S>& g,
                                                    const ThetaT<S>& theta) {
  std::array<S, kResidualDim> z;
  for (int o = 0; o < kResidualDim; ++o) {
    S acc = np.head_b[o] + theta[np.n_mix + o];
    for (int k = 0; k < np.n_mix; ++k) acc += (np.head_w[k] + theta[k]) * g(k, o);
    z[o] = acc;
  }
  return z;
}

// d(force)/d(fast coefficients): the pattern matrix transposed, then an
// identity block for the per-channel biases. Exact because the output is
// affine in the fast coefficients.
template <class S>
MatX<S> residual_theta_jacobian_from_mix(const NetParamsT<S>& np, const MatX<S>& g) {
  MatX<S> j(kResidualDim, np.n_mix + kResidualDim);
  for (int o = 0; o < kResidualDim; ++o) {
    for (int k = 0; k < np.n_mix; ++k) j(o, k) = g(k, o);
    j(o, np.n_mix + o) = S(1.0);
  }
  return j;
}

template <class S>
std::array<S, kResidualDim> residual_force(const NetParamsT<S>& np,
                                           const std::array<S, kFeatureDim>& eta,
                                           const ThetaT<S>& theta) {
  return residual_force_from_mix(np, residual_mix(np, residual_basis(np, eta)), theta);
}

template <class S>
MatX<S> residual_theta_jacobian(const NetParamsT<S>& np,
                                const std::array<S, kFeatureDim>& eta) {
  return residual_theta_jacobian_from_mix(np, residual_mix(np, residual_basis(np, eta)));
}

// Deterministic initialization. Layer weights use the usual fan-based
// uniform range; the mixing tensor starts at force scale so patterns are
// worth hundreds of newtons; blend weights start small and the bias at zero.
inline NetParams init_net_params(std::uint64_t seed, int hidden = 32, int n_mix = 8) {
  NetParams np;
  np.hidden = hidden;
  np.n_mix = n_mix;
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<double>& v, std::size_t n, double a) {
    std::uniform_real_distribution<double> ud(-a, a);
    v.resize(n);
    for (auto& x : v) x = (a == 0.0) ? 0.0 : ud(rng);
  };
  fill(np.w1, std::size_t(hidden) * kFeatureDim, std::sqrt(6.0 / (kFeatureDim + hidden)));
  fill(np.b1, hidden, 0.0);
  fill(np.w2, std::size_t(hidden) * hidden, std::sqrt(6.0 / (2.0 * hidden)));
  fill(np.b2, hidden, 0.0);
  fill(np.mix, std::size_t(n_mix) * kResidualDim * hidden, 70.0);
  fill(np.head_w, n_mix, 0.3);
  fill(np.head_b, kResidualDim, 0.0);
  return np;
}

template <class S>
ThetaT<S> zero_theta(const NetParamsT<S>& np) {
  return ThetaT<S>(np.theta_dim(), S(0.0));
}

}  // namespace metadapt
