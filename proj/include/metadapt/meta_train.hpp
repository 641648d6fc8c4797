#pragma once

// Offline training of everything slow: network weights, vehicle
// parameters, and the filter's covariances and gate scale. Covariance
// diagonals and the gate scale live behind a scaled softplus bijection so
// the optimizer works on unconstrained numbers near unit magnitude; the
// vehicle parameters are optimized directly and projected onto physical
// floors after each step.

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metadapt/meta_loss.hpp"

namespace metadapt {

// value = softplus(raw) * scale. The scale pins the operating point: raw
// values near softplus_inv(1) ~ 0.54 reproduce the hand-set defaults.
inline double positive_map(double raw, double scale) {
  return ad::softplus(raw) * scale;
}
inline ad::Var positive_map(const ad::Var& raw, double scale) {
  return ad::softplus(raw) * scale;
}
inline double positive_unmap(double value, double scale) {
  return ad::softplus_inv(value / scale);
}

template <class S>
struct MetaParamsT {
  NetParamsT<S> net;
  VehicleParamsT<S> psi;
  VecX<S> raw_p0, raw_q, raw_r;
  S raw_eps{};
  // Fixed positivity scales; captured at init time, never optimized.
  VecX<double> scale_p0, scale_q, scale_r;
  double scale_eps = 1.0;
};
using MetaParams = MetaParamsT<double>;

template <class S>
FilterParamsT<S> filter_from_raw(const MetaParamsT<S>& mp) {
  const int n = mp.raw_p0.size();
  FilterParamsT<S> fp;
  fp.p0 = VecX<S>(n);
  fp.q = VecX<S>(n);
  for (int i = 0; i < n; ++i) {
    fp.p0[i] = positive_map(mp.raw_p0[i], mp.scale_p0[i]);
    fp.q[i] = positive_map(mp.raw_q[i], mp.scale_q[i]);
  }
  fp.r = MatX<S>(kResidualDim, kResidualDim);
  for (int c = 0; c < kResidualDim; ++c)
    fp.r(c, c) = positive_map(mp.raw_r[c], mp.scale_r[c]);
  fp.eps = positive_map(mp.raw_eps, mp.scale_eps);
  return fp;
}

// Start from the hand-set filter defaults: scales carry the magnitudes,
// raws start at softplus_inv(1).
inline MetaParams init_meta_params(std::uint64_t seed, const VehicleParams& psi,
                                   int hidden = 32, int n_mix = 8) {
  MetaParams mp;
  mp.net = init_net_params(seed, hidden, n_mix);
  mp.psi = psi;
  const FilterParams fp = default_filter_params(n_mix);
  const int n = fp.p0.size();
  const double unit = ad::softplus_inv(1.0);
  mp.raw_p0 = VecX<double>(n, unit);
  mp.raw_q = VecX<double>(n, unit);
  mp.raw_r = VecX<double>(kResidualDim, unit);
  mp.raw_eps = unit;
  mp.scale_p0 = VecX<double>(n);
  mp.scale_q = VecX<double>(n);
  mp.scale_r = VecX<double>(kResidualDim);
  for (int i = 0; i < n; ++i) {
    mp.scale_p0[i] = fp.p0[i];
    mp.scale_q[i] = fp.q[i];
  }
  for (int c = 0; c < kResidualDim; ++c) mp.scale_r[c] = fp.r(c, c);
  mp.scale_eps = fp.eps;
  return mp;
}

// Keep directly-optimized vehicle parameters physically meaningful.
inline void enforce_param_floors(VehicleParams* p) {
  auto lo = [](double& v, double floor) { v = std::max(v, floor); };
  lo(p->mass, 50.0);
  lo(p->yaw_inertia, 20.0);
  lo(p->wheelbase, 0.5);
  lo(p->track_width, 0.4);
  lo(p->cg_height, 0.05);
  lo(p->tire_stiffness_long, 500.0);
  lo(p->tire_stiffness_lat, 500.0);
  lo(p->rolling_resistance, 0.0);
  lo(p->aero_drag, 0.0);
  lo(p->friction, 0.05);
  lo(p->brake_gain, 0.0);
  lo(p->brake_tc, 0.02);
  lo(p->steer_tc, 0.02);
  lo(p->steer_vel_tc, 0.02);
  lo(p->engine_tc, 0.02);
  lo(p->engine_idle, 0.0);
  lo(p->engine_gain, 1.0);
  lo(p->engine_wheel_ratio, 1e-3);
  lo(p->steer_col_max, 0.5);
  lo(p->steer_ratio, 0.005);
}

// -- flat vector layout ------------------------------------------------------

// One canonical flattening of the meta parameters, shared by the optimizer
// and the finite-difference checks. Per-coordinate learning rates ride
// along: trunk layers at the base rate, the force-sized groups (mixing
// tensor, head weights, output bias) scaled up so corrections of hundreds
// of newtons are reachable in a few hundred steps, raws at the filter
// rate, vehicle parameters at their own relative rate times their starting
// size. The vehicle block gets a separate rate because its gradients run
// orders of magnitude hotter than the filter raws it used to share with.
struct FlatMeta {
  std::vector<double> x;
  std::vector<double> lr;
};

namespace detail {

template <class F>
void walk_meta(MetaParams& mp, F&& f) {
  // f(group_name, double& value)
  visit_net_params(mp.net, [&](const char* name, std::vector<double>& v) {
    for (auto& e : v) f(name, e);
  });
  visit_params(mp.psi, [&](const char*, double& v) { f("psi", v); });
  for (int i = 0; i < mp.raw_p0.size(); ++i) f("raw_p0", mp.raw_p0[i]);
  for (int i = 0; i < mp.raw_q.size(); ++i) f("raw_q", mp.raw_q[i]);
  for (int i = 0; i < mp.raw_r.size(); ++i) f("raw_r", mp.raw_r[i]);
  f("raw_eps", mp.raw_eps);
}

}  // namespace detail

inline std::vector<double> flatten_meta(const MetaParams& mp) {
  std::vector<double> out;
  detail::walk_meta(const_cast<MetaParams&>(mp),
                    [&](const char*, double& v) { out.push_back(v); });
  return out;
}

inline void unflatten_meta(const std::vector<double>& x, MetaParams* mp) {
  std::size_t k = 0;
  detail::walk_meta(*mp, [&](const char*, double& v) { v = x[k++]; });
  assert(k == x.size());
}

inline std::vector<double> meta_lr_vector(const MetaParams& proto, double lr_net,
                                          double lr_filter, double lr_psi = 1e-3) {
  std::vector<double> lr;
  int psi_idx = 0;
  std::vector<double> psi_init;
  visit_params(proto.psi, [&](const char*, const double& v) { psi_init.push_back(v); });
  detail::walk_meta(const_cast<MetaParams&>(proto), [&](const char* g, double&) {
    const std::string group = g;
    if (group == "mix" || group == "head_w")
      lr.push_back(lr_net * 50.0);
    else if (group == "head_b")
      lr.push_back(lr_net * 500.0);
    else if (group == "psi")
      lr.push_back(lr_psi * std::max(std::abs(psi_init[psi_idx++]), 0.01));
    else if (group.rfind("raw", 0) == 0)
      lr.push_back(lr_filter);
    else
      lr.push_back(lr_net);
  });
  return lr;
}

// Group label of every flat coordinate, for block-wise gradient reporting.
inline std::vector<std::string> meta_coordinate_groups(const MetaParams& proto) {
  std::vector<std::string> groups;
  detail::walk_meta(const_cast<MetaParams&>(proto),
                    [&](const char* g, double&) { groups.emplace_back(g); });
  return groups;
}

// -- gradient ----------------------------------------------------------------

// Gradient of the summed segment losses, shaped like the parameters.
struct MetaGradient {
  MetaParams g;
  double loss_sum = 0.0;
  int count = 0;
  int diverged = 0;
  bool ok = true;
};

namespace detail {

inline MetaParams zero_like(const MetaParams& mp) {
  MetaParams z = mp;
  walk_meta(z, [](const char*, double& v) { v = 0.0; });
  return z;
}

inline MetaParamsT<ad::Var> lift_leaves(const MetaParams& mp) {
  MetaParamsT<ad::Var> out;
  out.net = net_cast<ad::Var>(mp.net);
  visit_net_params(out.net, [](const char*, std::vector<ad::Var>& v) {
    for (auto& e : v) e = ad::Var::leaf(e.v);
  });
  out.psi = params_cast<ad::Var>(mp.psi);
  visit_params(out.psi, [](const char*, ad::Var& v) { v = ad::Var::leaf(v.v); });
  auto lift_vec = [](const VecX<double>& src) {
    VecX<ad::Var> dst(src.size());
    for (int i = 0; i < src.size(); ++i) dst[i] = ad::Var::leaf(src[i]);
    return dst;
  };
  out.raw_p0 = lift_vec(mp.raw_p0);
  out.raw_q = lift_vec(mp.raw_q);
  out.raw_r = lift_vec(mp.raw_r);
  out.raw_eps = ad::Var::leaf(mp.raw_eps);
  out.scale_p0 = mp.scale_p0;
  out.scale_q = mp.scale_q;
  out.scale_r = mp.scale_r;
  out.scale_eps = mp.scale_eps;
  return out;
}

// Read the adjoint of every leaf in the lifted bundle into the gradient
// accumulator, in the same canonical order.
inline bool accumulate_adjoints(const MetaParamsT<ad::Var>& lifted,
                                const std::vector<double>& adj, MetaParams* g) {
  std::vector<const ad::Var*> leaves;
  visit_net_params(lifted.net, [&](const char*, const std::vector<ad::Var>& v) {
    for (const auto& e : v) leaves.push_back(&e);
  });
  visit_params(lifted.psi, [&](const char*, const ad::Var& v) { leaves.push_back(&v); });
  for (int i = 0; i < lifted.raw_p0.size(); ++i) leaves.push_back(&lifted.raw_p0[i]);
  for (int i = 0; i < lifted.raw_q.size(); ++i) leaves.push_back(&lifted.raw_q[i]);
  for (int i = 0; i < lifted.raw_r.size(); ++i) leaves.push_back(&lifted.raw_r[i]);
  leaves.push_back(&lifted.raw_eps);

  bool finite = true;
  std::size_t k = 0;
  walk_meta(*g, [&](const char*, double& v) {
    const ad::Var* leaf = leaves[k++];
    const double a = leaf->is_const() ? 0.0 : adj[leaf->i];
    if (!std::isfinite(a)) finite = false;
    v += a;
  });
  return finite;
}

}  // namespace detail

inline MetaGradient meta_gradient(const std::vector<const TrajectorySegment*>& batch,
                                  const MetaParams& mp, const SegmentLossOptions& opt) {
  MetaGradient out;
  out.g = detail::zero_like(mp);
  for (const TrajectorySegment* seg : batch) {
    ad::Tape tape;
    tape.reserve(std::size_t(seg->tau) * 15000 + std::size_t(seg->horizon) * 8000);
    ad::TapeScope scope(tape);
    const MetaParamsT<ad::Var> lifted = detail::lift_leaves(mp);
    const FilterParamsT<ad::Var> fp = filter_from_raw(lifted);
    bool diverged = false;
    const ad::Var loss =
        segment_loss(*seg, lifted.net, lifted.psi, fp, opt, &diverged);
    out.loss_sum += loss.v;
    ++out.count;
    if (diverged) ++out.diverged;
    const auto adj = tape.backward(loss.i);
    if (!detail::accumulate_adjoints(lifted, adj, &out.g)) out.ok = false;
  }
  if (!std::isfinite(out.loss_sum)) out.ok = false;
  return out;
}

// -- optimizer and training loop ---------------------------------------------

class Adam {
 public:
  explicit Adam(int dim) : m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::vector<double>* x, const std::vector<double>& grad,
            const std::vector<double>& lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < x->size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      (*x)[i] -= lr[i] * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
  int t_ = 0;
};

struct MetaTrainConfig {
  int batch = 8;
  int epochs = 20;
  int pretrain_epochs = 5;
  double lr_net = 1e-3;
  double lr_filter = 1e-2;
  double lr_psi = 1e-3;  // relative: each vehicle parameter moves this
                         // fraction of its starting magnitude per step
  std::uint64_t seed = 1;
  SegmentLossOptions loss;
};

struct EpochStats {
  int epoch = 0;
  bool pretrain = false;
  double mean_loss = 0.0;
  double wall_s = 0.0;
  int rejected_batches = 0;
  int diverged_segments = 0;
};

struct TrainResult {
  MetaParams params;
  std::vector<EpochStats> history;
};

// Epoch loop: shuffle segments without replacement, walk batches, take an
// optimizer step per batch on the mean gradient. The first epochs run with
// adaptation disabled so the slow parameters settle before gradients flow
// through the filter unroll.
inline TrainResult train(const std::vector<TrajectorySegment>& segs,
                         const MetaParams& init, const MetaTrainConfig& cfg) {
  TrainResult res;
  res.params = init;
  std::vector<double> x = flatten_meta(res.params);
  const std::vector<double> lr =
      meta_lr_vector(init, cfg.lr_net, cfg.lr_filter, cfg.lr_psi);
  Adam opt(int(x.size()));

  std::vector<int> order(segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) order[i] = int(i);

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = e;
    st.pretrain = e < cfg.pretrain_epochs;
    SegmentLossOptions o = cfg.loss;
    o.adapt = !st.pretrain;

    std::mt19937_64 rng(cfg.seed + 1000003ull * std::uint64_t(e + 1));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    int loss_count = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch) {
      std::vector<const TrajectorySegment*> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch); ++i)
        batch.push_back(&segs[order[i]]);
      const MetaGradient mg = meta_gradient(batch, res.params, o);
      loss_sum += mg.loss_sum;
      loss_count += mg.count;
      st.diverged_segments += mg.diverged;
      if (!mg.ok) {
        ++st.rejected_batches;
        continue;
      }
      std::vector<double> gflat = flatten_meta(mg.g);
      for (auto& gv : gflat) gv /= double(mg.count);
      opt.step(&x, gflat, lr);
      unflatten_meta(x, &res.params);
      enforce_param_floors(&res.params.psi);
      x = flatten_meta(res.params);  // floors feed back into the iterate
    }
    st.mean_loss = loss_count ? loss_sum / loss_count : 0.0;
    st.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(st);
  }
  return res;
}

}  // namespace metadapt
