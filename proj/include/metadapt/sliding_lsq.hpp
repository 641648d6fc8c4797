#pragma once

// Baseline adaptation: ridge-regularized least squares over the pattern
// blend coefficients, fit to the last few cycles. Each cycle contributes
// the velocity-channel sensitivity rows and an absolute target (innovation
// re-expressed around the coefficients used when the cycle was recorded),
// so stale rows stay consistent as the estimate moves.

#include <deque>
#include <vector>

#include "metadapt/linalg.hpp"

namespace metadapt {

class SlidingLsq {
 public:
  explicit SlidingLsq(int n_mix, int window = 25, double ridge = 1.0)
      : n_(n_mix), window_(window), ridge_(ridge) {}

  // ch_w: velocity-channel rows over the blend coefficients (3 x n_mix).
  // target: innovation plus ch_w times the coefficients active that cycle.
  void add_cycle(const MatX<double>& ch_w, const std::array<double, 3>& target) {
    cycles_.push_back({ch_w, target});
    while (int(cycles_.size()) > window_) cycles_.pop_front();
  }

  int size() const { return int(cycles_.size()); }

  bool solve(std::vector<double>* theta_w) const {
    if (cycles_.empty()) return false;
    MatX<double> m(n_, n_);
    MatX<double> b(n_, 1);
    for (const auto& c : cycles_) {
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          double acc = 0.0;
          for (int r = 0; r < 3; ++r) acc += c.a(r, i) * c.a(r, j);
          m(i, j) += acc;
        }
        double acc = 0.0;
        for (int r = 0; r < 3; ++r) acc += c.a(r, i) * c.y[r];
        b(i, 0) += acc;
      }
    }
    for (int i = 0; i < n_; ++i) m(i, i) += ridge_;
    MatX<double> x;
    if (!solve_spd(m, b, &x)) return false;
    theta_w->assign(n_, 0.0);
    for (int i = 0; i < n_; ++i) (*theta_w)[i] = x(i, 0);
    return true;
  }

 private:
  struct Cycle {
    MatX<double> a;
    std::array<double, 3> y;
  };
  int n_;
  int window_;
  double ridge_;
  std::deque<Cycle> cycles_;
};

}  // namespace metadapt
