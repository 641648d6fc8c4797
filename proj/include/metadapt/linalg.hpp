#pragma once

// Small dense vectors and matrices templated on the scalar type. Sizes here
// are tiny (state dim 10, adapted-parameter dim ~11), so simple loops beat
// anything fancier and stay transparent to the autodiff scalars.

#include <cassert>
#include <cstddef>
#include <vector>

#include "metadapt/ad.hpp"

namespace metadapt {

template <class S>
class VecX {
 public:
  VecX() = default;
  explicit VecX(int n) : d_(n) {}
  VecX(int n, const S& fill) : d_(n, fill) {}

  int size() const { return static_cast<int>(d_.size()); }
  S& operator[](int i) { return d_[i]; }
  const S& operator[](int i) const { return d_[i]; }
  S* data() { return d_.data(); }
  const S* data() const { return d_.data(); }

 private:
  std::vector<S> d_;
};

template <class S>
class MatX {
 public:
  MatX() = default;
  MatX(int rows, int cols) : r_(rows), c_(cols), d_(rows * cols) {}

  int rows() const { return r_; }
  int cols() const { return c_; }
  S& operator()(int i, int j) { return d_[i * c_ + j]; }
  const S& operator()(int i, int j) const { return d_[i * c_ + j]; }

  static MatX identity(int n) {
    MatX m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = S(1.0);
    return m;
  }

 private:
  int r_ = 0, c_ = 0;
  std::vector<S> d_;
};

template <class S>
MatX<S> matmul(const MatX<S>& a, const MatX<S>& b) {
  assert(a.cols() == b.rows());
  MatX<S> r(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < a.cols(); ++k) {
      const S& aik = a(i, k);
      for (int j = 0; j < b.cols(); ++j) r(i, j) += aik * b(k, j);
    }
  return r;
}

template <class S>
VecX<S> matvec(const MatX<S>& a, const VecX<S>& x) {
  assert(a.cols() == x.size());
  VecX<S> r(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    S acc{};
    for (int j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    r[i] = acc;
  }
  return r;
}

template <class S>
MatX<S> transpose(const MatX<S>& a) {
  MatX<S> r(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
  return r;
}

template <class S>
MatX<S> operator+(const MatX<S>& a, const MatX<S>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  MatX<S> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = a(i, j) + b(i, j);
  return r;
}

template <class S>
MatX<S> operator-(const MatX<S>& a, const MatX<S>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  MatX<S> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = a(i, j) - b(i, j);
  return r;
}

// Cholesky factorization of a symmetric positive-definite matrix; returns
// false (double mode: caller checks) when a pivot is not strictly positive.
template <class S>
bool cholesky(const MatX<S>& a, MatX<S>* lower) {
  using std::sqrt;
  using ad::sqrt;
  const int n = a.rows();
  assert(a.cols() == n);
  MatX<S> l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      S sum = a(i, j);
      for (int k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(ad::value_of(sum) > 0.0)) return false;
        l(i, i) = sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  *lower = l;
  return true;
}

// Solve A X = B for SPD A via Cholesky. Returns false if not SPD.
template <class S>
bool solve_spd(const MatX<S>& a, const MatX<S>& b, MatX<S>* x) {
  MatX<S> l;
  if (!cholesky(a, &l)) return false;
  const int n = a.rows();
  const int m = b.cols();
  MatX<S> y(n, m);
  for (int c = 0; c < m; ++c) {
    for (int i = 0; i < n; ++i) {
      S sum = b(i, c);
      for (int k = 0; k < i; ++k) sum -= l(i, k) * y(k, c);
      y(i, c) = sum / l(i, i);
    }
  }
  MatX<S> r(n, m);
  for (int c = 0; c < m; ++c) {
    for (int i = n - 1; i >= 0; --i) {
      S sum = y(i, c);
      for (int k = i + 1; k < n; ++k) sum -= l(k, i) * r(k, c);
      r(i, c) = sum / l(i, i);
    }
  }
  *x = r;
  return true;
}

template <class S>
S dot(const VecX<S>& a, const VecX<S>& b) {
  assert(a.size() == b.size());
  S acc{};
  for (int i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
double norm_value(const VecX<S>& a) {
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double v = ad::value_of(a[i]);
    acc += v * v;
  }
  return std::sqrt(acc);
}

// Symmetric eigenvalue range probes used by covariance health checks
// (Gershgorin-style bound is too loose; use cyclic Jacobi on the tiny n here).
inline double min_eigenvalue_sym(MatX<double> a) {
  const int n = a.rows();
  for (int sweep = 0; sweep < 40; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2.0 * a(p, q), a(q, q) - a(p, p));
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  double mn = a(0, 0);
  for (int i = 1; i < n; ++i) mn = std::min(mn, a(i, i));
  return mn;
}

}  // namespace metadapt
