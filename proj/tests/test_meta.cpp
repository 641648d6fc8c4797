#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "metadapt/meta_train.hpp"

using namespace metadapt;

namespace {

constexpr double kDt = 0.02;

State start_state() {
  State x{};
  x[kYaw] = 0.1;
  x[kVx] = 5.0;
  x[kEngine] = 200.0;
  return x;
}

Control control_at(int k) {
  Control u{};
  u[kThrottle] = 0.4;
  u[kBrakeCmd] = 0.0;
  u[kSteerCmd] = 0.05 * std::sin(k / 25.0);
  return u;
}

TerrainSample terrain_at(int k) {
  TerrainSample y = flat_terrain();
  y[kRoll] = 0.02 * std::sin(k / 37.0);
  y[kPitch] = 0.03 * std::sin(k / 53.0);
  return y;
}

// Roll the model itself forward: the data-generating system is the
// parametric model under `psi` plus the network prior at zero coefficients
// plus an optional constant body-frame disturbance.
RunLog generate_run(const NetParams& np, const VehicleParams& psi,
                    const std::array<double, 3>& extra, int steps, int id) {
  RunLog run;
  run.id = id;
  State x = start_state();
  run.x.push_back(x);
  const Theta theta0 = zero_theta(np);
  for (int k = 0; k < steps; ++k) {
    const Control u = control_at(k);
    const TerrainSample y = terrain_at(k);
    const auto tf = tire_forces<double>(x, y, psi);
    const auto eta = residual_features<double>(x, u, y, tf);
    auto zeta = residual_force(np, eta, theta0);
    for (int c = 0; c < kResidualDim; ++c) zeta[c] += extra[c];
    x = step_t<double>(x, u, y, psi, zeta, kDt);
    run.u.push_back(u);
    run.y.push_back(y);
    run.x.push_back(x);
  }
  run.u.push_back(Control{});
  run.y.push_back(terrain_at(steps));
  return run;
}

double loss_at(const TrajectorySegment& seg, const MetaParams& mp,
               const SegmentLossOptions& opt) {
  const FilterParams fp = filter_from_raw(mp);
  return segment_loss<double>(seg, mp.net, mp.psi, fp, opt);
}

}  // namespace

TEST_CASE("slicing yields one segment from an exact-length run") {
  SliceConfig cfg;
  cfg.tau = 6;
  cfg.horizon = 4;
  cfg.stride = 1;
  const int len = cfg.tau + cfg.horizon + 1;
  const NetParams np = init_net_params(3, 4, 3);
  std::vector<RunLog> runs = {
      generate_run(np, onboard_params(), {0, 0, 0}, len - 1, 7)};
  int skipped = -1;
  const auto segs = slice_dataset(runs, cfg, &skipped);
  REQUIRE(segs.size() == 1);
  CHECK(skipped == 0);
  CHECK(segs[0].run_id == 7);
  CHECK(segs[0].source_t == cfg.tau);
  CHECK(int(segs[0].x.size()) == len);
  CHECK(int(segs[0].u.size()) == len);
  CHECK(int(segs[0].y.size()) == len);
}

TEST_CASE("slicing with unit stride yields k+1 segments from k extra samples") {
  SliceConfig cfg;
  cfg.tau = 6;
  cfg.horizon = 4;
  cfg.stride = 1;
  const int k = 5;
  const NetParams np = init_net_params(3, 4, 3);
  std::vector<RunLog> runs = {
      generate_run(np, onboard_params(), {0, 0, 0}, cfg.tau + cfg.horizon + k, 1)};
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == std::size_t(k + 1));
  for (int i = 0; i <= k; ++i) {
    CHECK(segs[i].source_t == i + cfg.tau);
    // each segment is a verbatim slice of the run
    for (int j = 0; j < kStateDim; ++j)
      CHECK(segs[i].x[0][j] == runs[0].x[i][j]);
  }
}

TEST_CASE("slicing with stride tau+horizon tiles the run without overlap") {
  SliceConfig cfg;
  cfg.tau = 6;
  cfg.horizon = 4;
  cfg.stride = cfg.tau + cfg.horizon;
  const NetParams np = init_net_params(3, 4, 3);
  // two full tiles: the second starts where the first hands off
  std::vector<RunLog> runs = {
      generate_run(np, onboard_params(), {0, 0, 0}, 2 * cfg.stride, 1)};
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 2);
  CHECK(segs[1].source_t - segs[0].source_t == cfg.stride);
  // no shared transition: segment 1 begins at the final state of segment 0
  for (int j = 0; j < kStateDim; ++j)
    CHECK(segs[1].x[0][j] == segs[0].x[cfg.stride][j]);
}

TEST_CASE("slicing skips and counts runs shorter than one segment") {
  SliceConfig cfg;
  cfg.tau = 6;
  cfg.horizon = 4;
  cfg.stride = 1;
  const NetParams np = init_net_params(3, 4, 3);
  std::vector<RunLog> runs;
  runs.push_back(generate_run(np, onboard_params(), {0, 0, 0}, 4, 1));  // short
  runs.push_back(generate_run(np, onboard_params(), {0, 0, 0}, 14, 2));
  runs.push_back(generate_run(np, onboard_params(), {0, 0, 0}, 2, 3));  // short
  int skipped = -1;
  const auto segs = slice_dataset(runs, cfg, &skipped);
  CHECK(skipped == 2);
  for (const auto& s : segs) CHECK(s.run_id == 2);
  CHECK(segs.size() == 5);  // 15 samples, len 11, stride 1
}

TEST_CASE("segments never span run boundaries") {
  SliceConfig cfg;
  cfg.tau = 6;
  cfg.horizon = 4;
  cfg.stride = 3;
  const NetParams np = init_net_params(3, 4, 3);
  std::vector<RunLog> runs;
  runs.push_back(generate_run(np, onboard_params(), {0, 0, 0}, 13, 1));
  runs.push_back(generate_run(np, onboard_params(), {0, 0, 0}, 13, 2));
  const auto segs = slice_dataset(runs, cfg);
  // each 14-sample run yields starts 0 and 3 only
  REQUIRE(segs.size() == 4);
  CHECK(segs[0].run_id == 1);
  CHECK(segs[1].run_id == 1);
  CHECK(segs[2].run_id == 2);
  CHECK(segs[3].run_id == 2);
}

TEST_CASE("loss is exactly zero on self-generated data") {
  const NetParams np = init_net_params(11, 4, 3);
  const VehicleParams psi = onboard_params();
  MetaParams mp = init_meta_params(11, psi, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(np, psi, {0, 0, 0}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);

  // the model's own trajectory carries zero innovation, so the filter never
  // moves the coefficients and the rollout retraces the data bitwise
  bool diverged = true;
  const FilterParams fp = filter_from_raw(mp);
  const double loss = segment_loss<double>(segs[0], np, psi, fp, opt, &diverged);
  CHECK(loss == 0.0);
  CHECK_FALSE(diverged);
}

TEST_CASE("constant offset in a unit-weight channel scores its square") {
  const NetParams np = init_net_params(11, 4, 3);
  const VehicleParams psi = onboard_params();
  MetaParams mp = init_meta_params(11, psi, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(np, psi, {0, 0, 0}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);

  const double d = 0.37;
  for (int k = cfg.tau + 1; k < int(segs[0].x.size()); ++k)
    segs[0].x[k][kPx] += d;  // shift prediction targets only

  const FilterParams fp = filter_from_raw(mp);
  const double loss = segment_loss<double>(segs[0], np, psi, fp, opt);
  CHECK(loss == doctest::Approx(d * d).epsilon(1e-9));
}

TEST_CASE("segment loss matches an explicit reimplementation") {
  const NetParams np = init_net_params(23, 4, 3);
  const VehicleParams psi_model = onboard_params();
  VehicleParams psi_data = psi_model;
  psi_data.mass = 950.0;
  MetaParams mp = init_meta_params(23, psi_model, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(np, psi_data, {40, 25, 8}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);
  const TrajectorySegment& seg = segs[0];

  const FilterParams fp = filter_from_raw(mp);
  const double got = segment_loss<double>(seg, np, psi_model, fp, opt);

  // hand-rolled equivalent: run the filter window by window, freeze the
  // coefficients, roll out open loop, average the weighted squared error
  AdaptState st = init_adapt_state(fp);
  for (int k = 0; k + opt.h <= seg.tau; k += opt.h) {
    WindowData w;
    w.x0 = seg.x[k];
    w.u.assign(seg.u.begin() + k, seg.u.begin() + k + opt.h);
    w.y.assign(seg.y.begin() + k, seg.y.begin() + k + opt.h);
    w.x1 = seg.x[k + opt.h];
    adapt_window(np, psi_model, fp, opt.beta, opt.dt, w, &st);
  }
  State xh = seg.x[seg.tau];
  double acc = 0.0;
  for (int k = 0; k < seg.horizon; ++k) {
    const int idx = seg.tau + k;
    const auto tf = tire_forces<double>(xh, seg.y[idx], psi_model);
    const auto eta = residual_features<double>(xh, seg.u[idx], seg.y[idx], tf);
    const auto zeta = residual_force(np, eta, st.theta);
    xh = step_t<double>(xh, seg.u[idx], seg.y[idx], psi_model, zeta, opt.dt);
    for (int c = 0; c < kStateDim; ++c) {
      if (kLossWeights[c] == 0.0) continue;
      double diff = xh[c] - seg.x[idx + 1][c];
      if (c == kYaw) diff = ad::wrap_angle(diff);
      acc += kLossWeights[c] * diff * diff;
    }
  }
  CHECK(got == doctest::Approx(acc / seg.horizon).epsilon(1e-12));
  CHECK(got > 0.0);
}

TEST_CASE("meta gradient matches finite differences block by block") {
  const VehicleParams psi_model = onboard_params();
  VehicleParams psi_data = psi_model;
  psi_data.mass = 950.0;
  psi_data.friction = 0.88;
  MetaParams mp = init_meta_params(29, psi_model, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(mp.net, psi_data, {40, 25, 8}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);

  const MetaGradient mg = meta_gradient({&segs[0]}, mp, opt);
  REQUIRE(mg.ok);
  CHECK(mg.count == 1);
  CHECK(mg.diverged == 0);
  CHECK(mg.loss_sum == doctest::Approx(loss_at(segs[0], mp, opt)));

  const std::vector<double> x0 = flatten_meta(mp);
  const std::vector<double> g = flatten_meta(mg.g);
  const auto groups = meta_coordinate_groups(mp);
  REQUIRE(g.size() == x0.size());
  REQUIRE(groups.size() == x0.size());

  std::map<std::string, double> num, den;
  for (std::size_t j = 0; j < x0.size(); ++j) {
    const double hj = 1e-4 * std::max(1.0, std::abs(x0[j]));
    std::vector<double> xp = x0, xm = x0;
    xp[j] += hj;
    xm[j] -= hj;
    MetaParams mpp = mp, mpm = mp;
    unflatten_meta(xp, &mpp);
    unflatten_meta(xm, &mpm);
    const double fd = (loss_at(segs[0], mpp, opt) - loss_at(segs[0], mpm, opt)) / (2 * hj);
    num[groups[j]] += (g[j] - fd) * (g[j] - fd);
    den[groups[j]] += fd * fd;
  }
  for (const auto& [name, n2] : num) {
    const double rel = std::sqrt(n2) / std::max(std::sqrt(den[name]), 1e-10);
    INFO("block " << name);
    CHECK(rel < 1e-3);
  }
  // every block carries signal in this fixture
  for (const auto& [name, d2] : den) {
    INFO("block " << name);
    CHECK(d2 > 0.0);
  }
}

TEST_CASE("gate scale receives no gradient when the gate is pinned") {
  const VehicleParams psi_model = onboard_params();
  VehicleParams psi_data = psi_model;
  psi_data.mass = 950.0;
  MetaParams mp = init_meta_params(29, psi_model, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  opt.use_gate = false;
  std::vector<RunLog> runs = {generate_run(mp.net, psi_data, {40, 25, 8}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);

  const MetaGradient mg = meta_gradient({&segs[0]}, mp, opt);
  REQUIRE(mg.ok);
  CHECK(mg.g.raw_eps == 0.0);
}

TEST_CASE("a duplicated segment doubles its gradient contribution") {
  const VehicleParams psi_model = onboard_params();
  VehicleParams psi_data = psi_model;
  psi_data.mass = 950.0;
  MetaParams mp = init_meta_params(31, psi_model, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(mp.net, psi_data, {40, 25, 8}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  const auto segs = slice_dataset(runs, cfg);

  const MetaGradient one = meta_gradient({&segs[0]}, mp, opt);
  const MetaGradient two = meta_gradient({&segs[0], &segs[0]}, mp, opt);
  REQUIRE(one.ok);
  REQUIRE(two.ok);
  CHECK(two.count == 2);
  CHECK(two.loss_sum == 2.0 * one.loss_sum);
  const auto g1 = flatten_meta(one.g);
  const auto g2 = flatten_meta(two.g);
  for (std::size_t j = 0; j < g1.size(); ++j) CHECK(g2[j] == 2.0 * g1[j]);
}

TEST_CASE("positive parametrization round-trips and stays positive") {
  for (double scale : {1e-4, 0.09, 1.0, 62500.0, 160000.0}) {
    for (double value : {0.2 * scale, scale, 7.3 * scale}) {
      const double raw = positive_unmap(value, scale);
      CHECK(positive_map(raw, scale) == doctest::Approx(value).epsilon(1e-10));
    }
    // arbitrarily negative raws still map to something strictly positive
    CHECK(positive_map(-40.0, scale) > 0.0);
  }
}

TEST_CASE("initial raw parameters reproduce the default filter") {
  const MetaParams mp = init_meta_params(5, onboard_params(), 4, 3);
  const FilterParams fp = filter_from_raw(mp);
  const FilterParams ref = default_filter_params(3);
  for (int i = 0; i < ref.p0.size(); ++i) {
    CHECK(fp.p0[i] == doctest::Approx(ref.p0[i]).epsilon(1e-12));
    CHECK(fp.q[i] == doctest::Approx(ref.q[i]).epsilon(1e-12));
  }
  for (int c = 0; c < kResidualDim; ++c)
    CHECK(fp.r(c, c) == doctest::Approx(ref.r(c, c)).epsilon(1e-12));
  CHECK(fp.eps == doctest::Approx(ref.eps).epsilon(1e-12));
}

TEST_CASE("flatten and unflatten are mutually inverse") {
  MetaParams mp = init_meta_params(13, onboard_params(), 4, 3);
  const auto x = flatten_meta(mp);
  MetaParams mp2 = mp;
  for (int i = 0; i < mp2.raw_p0.size(); ++i) mp2.raw_p0[i] = 0.0;
  mp2.psi.mass = 0.0;
  unflatten_meta(x, &mp2);
  const auto x2 = flatten_meta(mp2);
  REQUIRE(x.size() == x2.size());
  for (std::size_t j = 0; j < x.size(); ++j) CHECK(x[j] == x2[j]);
  CHECK(mp2.psi.mass == mp.psi.mass);

  const auto lr = meta_lr_vector(mp, 1e-3, 1e-2);
  REQUIRE(lr.size() == x.size());
  const auto groups = meta_coordinate_groups(mp);
  for (std::size_t j = 0; j < lr.size(); ++j) {
    if (groups[j] == "mix") CHECK(lr[j] == 1e-3 * 50.0);
    if (groups[j] == "head_b") CHECK(lr[j] == 1e-3 * 500.0);
    if (groups[j].rfind("raw", 0) == 0) CHECK(lr[j] == 1e-2);
  }

  // the vehicle block rides its own relative rate; zeroing it pins psi
  // while the other groups keep their rates
  const auto lr_frozen = meta_lr_vector(mp, 1e-3, 1e-2, 0.0);
  for (std::size_t j = 0; j < lr_frozen.size(); ++j) {
    if (groups[j] == "psi")
      CHECK(lr_frozen[j] == 0.0);
    else
      CHECK(lr_frozen[j] == lr[j]);
  }
}

TEST_CASE("zero learning rates leave the parameters untouched") {
  const VehicleParams psi = onboard_params();
  MetaParams init = init_meta_params(17, psi, 4, 3);
  std::vector<RunLog> runs = {generate_run(init.net, psi, {30, 10, 4}, 45, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 15;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(!segs.empty());

  MetaTrainConfig tc;
  tc.batch = 4;
  tc.epochs = 2;
  tc.pretrain_epochs = 1;
  tc.lr_net = 0.0;
  tc.lr_filter = 0.0;
  tc.lr_psi = 0.0;
  tc.loss.h = 5;
  const TrainResult res = train(segs, init, tc);
  const auto a = flatten_meta(init);
  const auto b = flatten_meta(res.params);
  REQUIRE(a.size() == b.size());
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  CHECK(res.history.size() == 2);
  CHECK(res.history[0].pretrain);
  CHECK_FALSE(res.history[1].pretrain);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const VehicleParams psi = onboard_params();
  MetaParams init = init_meta_params(19, psi, 4, 3);
  VehicleParams psi_data = psi;
  psi_data.mass = 940.0;
  std::vector<RunLog> runs = {generate_run(init.net, psi_data, {25, 15, 5}, 45, 1)};
  SliceConfig cfg;
  cfg.tau = 10;
  cfg.horizon = 5;
  cfg.stride = 10;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() >= 2);

  MetaTrainConfig tc;
  tc.batch = 2;
  tc.epochs = 3;
  tc.pretrain_epochs = 1;
  tc.seed = 5;
  tc.loss.h = 5;
  const TrainResult a = train(segs, init, tc);
  const TrainResult b = train(segs, init, tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e)
    CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
  const auto xa = flatten_meta(a.params);
  const auto xb = flatten_meta(b.params);
  for (std::size_t j = 0; j < xa.size(); ++j) CHECK(xa[j] == xb[j]);
}

TEST_CASE("pretraining reduces the loss on mismatched data") {
  const VehicleParams psi = onboard_params();
  MetaParams init = init_meta_params(37, psi, 4, 3);
  VehicleParams psi_data = psi;
  psi_data.mass = 960.0;
  std::vector<RunLog> runs = {generate_run(init.net, psi_data, {60, 35, 10}, 45, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 7;
  const auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() >= 2);

  MetaTrainConfig tc;
  tc.batch = 16;  // full batch: one step per epoch
  tc.epochs = 6;
  tc.pretrain_epochs = 6;
  tc.lr_net = 3e-3;
  tc.loss.h = 5;
  const TrainResult res = train(segs, init, tc);
  REQUIRE(res.history.size() == 6);
  CHECK(res.history.back().mean_loss < res.history.front().mean_loss);
  for (const auto& st : res.history) {
    CHECK(st.rejected_batches == 0);
    CHECK(st.diverged_segments == 0);
  }
}

TEST_CASE("corrupted data hits the loss ceiling and is flagged") {
  const NetParams np = init_net_params(41, 4, 3);
  const VehicleParams psi = onboard_params();
  MetaParams mp = init_meta_params(41, psi, 4, 3);

  SegmentLossOptions opt;
  opt.h = 5;
  std::vector<RunLog> runs = {generate_run(np, psi, {0, 0, 0}, 30, 1)};
  SliceConfig cfg;
  cfg.tau = 20;
  cfg.horizon = 10;
  cfg.stride = 31;
  auto segs = slice_dataset(runs, cfg);
  REQUIRE(segs.size() == 1);
  segs[0].x[cfg.tau][kVx] = std::numeric_limits<double>::quiet_NaN();

  bool diverged = false;
  const FilterParams fp = filter_from_raw(mp);
  const double loss = segment_loss<double>(segs[0], np, psi, fp, opt, &diverged);
  CHECK(diverged);
  CHECK(loss == opt.ceiling);

  // the training path survives it: the batch is dropped, not crashed
  const MetaGradient mg = meta_gradient({&segs[0]}, mp, opt);
  CHECK(mg.diverged == 1);
  CHECK(mg.loss_sum == opt.ceiling);
}
