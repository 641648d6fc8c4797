#pragma once

// Scalar-level reverse-mode autodiff on a tape, plus a fixed-width
// forward-mode dual type that nests over any scalar (double or Var).
// The dynamics and filter code are templated on the scalar type, so the
// same source evaluates values (double), Jacobians (Dual<double,N>),
// meta-gradients (Var), and Jacobians inside meta-gradients (Dual<Var,N>).

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

namespace metadapt::ad {

inline constexpr std::uint32_t kConstIdx = 0xffffffffu;

// One recorded operation: up to two parents with local partials.
struct TapeNode {
  std::uint32_t a;
  std::uint32_t b;
  double wa;
  double wb;
};

class Tape {
 public:
  std::uint32_t push(std::uint32_t a, double wa, std::uint32_t b, double wb) {
    nodes_.push_back({a, b, wa, wb});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }
  std::uint32_t push_leaf() { return push(kConstIdx, 0.0, kConstIdx, 0.0); }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Adjoints of every node given a unit seed on `output`.
  std::vector<double> backward(std::uint32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output == kConstIdx) return adj;
    adj[output] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const TapeNode& n = nodes_[i];
      if (n.a != kConstIdx) adj[n.a] += n.wa * g;
      if (n.b != kConstIdx) adj[n.b] += n.wb * g;
    }
    return adj;
  }

 private:
  std::vector<TapeNode> nodes_;
};

// Active tape for Var operations. Single-owner per thread.
inline thread_local Tape* g_tape = nullptr;

struct TapeScope {
  explicit TapeScope(Tape& t) : prev(g_tape) { g_tape = &t; }
  ~TapeScope() { g_tape = prev; }
  Tape* prev;
};

// Reverse-mode scalar. Default-constructed and double-constructed Vars are
// constants (no tape node); leaves are made explicitly.
struct Var {
  double v = 0.0;
  std::uint32_t i = kConstIdx;

  Var() = default;
  Var(double x) : v(x) {}  // NOLINT: implicit constant lift is the point

  bool is_const() const { return i == kConstIdx; }

  static Var leaf(double x) {
    Var r;
    r.v = x;
    r.i = g_tape->push_leaf();
    return r;
  }
};

inline Var make_node(double value, const Var& a, double wa) {
  if (a.is_const()) return Var(value);
  Var r;
  r.v = value;
  r.i = g_tape->push(a.i, wa, kConstIdx, 0.0);
  return r;
}

inline Var make_node(double value, const Var& a, double wa, const Var& b,
                     double wb) {
  if (a.is_const() && b.is_const()) return Var(value);
  if (a.is_const()) return make_node(value, b, wb);
  if (b.is_const()) return make_node(value, a, wa);
  Var r;
  r.v = value;
  r.i = g_tape->push(a.i, wa, b.i, wb);
  return r;
}

// -- arithmetic ------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  return make_node(a.v + b.v, a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return make_node(a.v - b.v, a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  // Structural zeros are common in seeded Jacobian work; fold them so the
  // tape does not fill with no-op products.
  if (a.is_const() && a.v == 0.0) return Var(0.0);
  if (b.is_const() && b.v == 0.0) return Var(0.0);
  return make_node(a.v * b.v, a, b.v, b, a.v);
}
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return make_node(a.v * inv, a, inv, b, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return make_node(-a.v, a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

// -- elementary functions --------------------------------------------------

inline Var sin(const Var& a) { return make_node(std::sin(a.v), a, std::cos(a.v)); }
inline Var cos(const Var& a) { return make_node(std::cos(a.v), a, -std::sin(a.v)); }
inline Var tan(const Var& a) {
  const double t = std::tan(a.v);
  return make_node(t, a, 1.0 + t * t);
}
inline Var atan(const Var& a) {
  return make_node(std::atan(a.v), a, 1.0 / (1.0 + a.v * a.v));
}
inline Var atan2(const Var& y, const Var& x) {
  const double d = x.v * x.v + y.v * y.v;
  return make_node(std::atan2(y.v, x.v), y, x.v / d, x, -y.v / d);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return make_node(e, a, e);
}
inline Var log(const Var& a) { return make_node(std::log(a.v), a, 1.0 / a.v); }
inline Var log1p(const Var& a) {
  return make_node(std::log1p(a.v), a, 1.0 / (1.0 + a.v));
}
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.v);
  return make_node(s, a, 0.5 / s);
}
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.v);
  return make_node(t, a, 1.0 - t * t);
}
inline Var abs(const Var& a) {
  return make_node(std::abs(a.v), a, a.v < 0.0 ? -1.0 : 1.0);
}
inline Var fabs(const Var& a) { return abs(a); }
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }
inline Var clamp(const Var& x, const Var& lo, const Var& hi) {
  return min(max(x, lo), hi);
}
inline Var hypot(const Var& a, const Var& b) { return sqrt(a * a + b * b); }
inline Var pow(const Var& a, double p) {
  return make_node(std::pow(a.v, p), a, p * std::pow(a.v, p - 1.0));
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

// -- forward-mode dual over an arbitrary scalar ------------------------------

template <class S, int N>
struct Dual {
  S v{};
  std::array<S, N> d{};  // default S() is a structural zero for double and Var

  Dual() = default;
  Dual(const S& value) : v(value) {}  // NOLINT
  Dual(double value)                  // NOLINT
    requires(!std::is_same_v<S, double>)
      : v(value) {}

  static Dual seeded(const S& value, int k) {
    Dual r(value);
    r.d[k] = S(1.0);
    return r;
  }
};

template <class S, int N>
Dual<S, N> operator+(const Dual<S, N>& a, const Dual<S, N>& b) {
  Dual<S, N> r(a.v + b.v);
  for (int k = 0; k < N; ++k) r.d[k] = a.d[k] + b.d[k];
  return r;
}
template <class S, int N>
Dual<S, N> operator-(const Dual<S, N>& a, const Dual<S, N>& b) {
  Dual<S, N> r(a.v - b.v);
  for (int k = 0; k < N; ++k) r.d[k] = a.d[k] - b.d[k];
  return r;
}
template <class S, int N>
Dual<S, N> operator*(const Dual<S, N>& a, const Dual<S, N>& b) {
  Dual<S, N> r(a.v * b.v);
  for (int k = 0; k < N; ++k) r.d[k] = a.d[k] * b.v + b.d[k] * a.v;
  return r;
}
template <class S, int N>
Dual<S, N> operator/(const Dual<S, N>& a, const Dual<S, N>& b) {
  const S inv = S(1.0) / b.v;
  Dual<S, N> r(a.v * inv);
  for (int k = 0; k < N; ++k) r.d[k] = (a.d[k] - r.v * b.d[k]) * inv;
  return r;
}
template <class S, int N>
Dual<S, N> operator-(const Dual<S, N>& a) {
  Dual<S, N> r(-a.v);
  for (int k = 0; k < N; ++k) r.d[k] = -a.d[k];
  return r;
}

template <class S, int N>
Dual<S, N>& operator+=(Dual<S, N>& a, const Dual<S, N>& b) { return a = a + b; }
template <class S, int N>
Dual<S, N>& operator-=(Dual<S, N>& a, const Dual<S, N>& b) { return a = a - b; }
template <class S, int N>
Dual<S, N>& operator*=(Dual<S, N>& a, const Dual<S, N>& b) { return a = a * b; }
template <class S, int N>
Dual<S, N>& operator/=(Dual<S, N>& a, const Dual<S, N>& b) { return a = a / b; }

// Mixed double/S promotions.
template <class S, int N>
Dual<S, N> operator+(double a, const Dual<S, N>& b) { return Dual<S, N>(S(a)) + b; }
template <class S, int N>
Dual<S, N> operator+(const Dual<S, N>& a, double b) { return a + Dual<S, N>(S(b)); }
template <class S, int N>
Dual<S, N> operator-(double a, const Dual<S, N>& b) { return Dual<S, N>(S(a)) - b; }
template <class S, int N>
Dual<S, N> operator-(const Dual<S, N>& a, double b) { return a - Dual<S, N>(S(b)); }
template <class S, int N>
Dual<S, N> operator*(double a, const Dual<S, N>& b) { return Dual<S, N>(S(a)) * b; }
template <class S, int N>
Dual<S, N> operator*(const Dual<S, N>& a, double b) { return a * Dual<S, N>(S(b)); }
template <class S, int N>
Dual<S, N> operator/(const Dual<S, N>& a, double b) { return a / Dual<S, N>(S(b)); }
template <class S, int N>
Dual<S, N> operator/(double a, const Dual<S, N>& b) { return Dual<S, N>(S(a)) / b; }

template <class S, int N>
bool operator<(const Dual<S, N>& a, const Dual<S, N>& b) { return value_of(a) < value_of(b); }
template <class S, int N>
bool operator>(const Dual<S, N>& a, const Dual<S, N>& b) { return value_of(a) > value_of(b); }
template <class S, int N>
bool operator<=(const Dual<S, N>& a, const Dual<S, N>& b) { return value_of(a) <= value_of(b); }
template <class S, int N>
bool operator>=(const Dual<S, N>& a, const Dual<S, N>& b) { return value_of(a) >= value_of(b); }

template <class S, int N>
double value_of(const Dual<S, N>& x) { return value_of(x.v); }

template <class S, int N>
Dual<S, N> chain(const Dual<S, N>& a, const S& value, const S& dvalue) {
  Dual<S, N> r(value);
  for (int k = 0; k < N; ++k) r.d[k] = dvalue * a.d[k];
  return r;
}

template <class S, int N>
Dual<S, N> sin(const Dual<S, N>& a) {
  using std::cos; using std::sin;
  return chain(a, S(sin(a.v)), S(cos(a.v)));
}
template <class S, int N>
Dual<S, N> cos(const Dual<S, N>& a) {
  using std::cos; using std::sin;
  return chain(a, S(cos(a.v)), S(-sin(a.v)));
}
template <class S, int N>
Dual<S, N> tan(const Dual<S, N>& a) {
  using std::tan;
  const S t = tan(a.v);
  return chain(a, t, S(1.0) + t * t);
}
template <class S, int N>
Dual<S, N> atan(const Dual<S, N>& a) {
  using std::atan;
  return chain(a, S(atan(a.v)), S(1.0) / (S(1.0) + a.v * a.v));
}
template <class S, int N>
Dual<S, N> atan2(const Dual<S, N>& y, const Dual<S, N>& x) {
  using std::atan2;
  const S d = x.v * x.v + y.v * y.v;
  Dual<S, N> r(atan2(y.v, x.v));
  const S wy = x.v / d;
  const S wx = -y.v / d;
  for (int k = 0; k < N; ++k) r.d[k] = wy * y.d[k] + wx * x.d[k];
  return r;
}
template <class S, int N>
Dual<S, N> sqrt(const Dual<S, N>& a) {
  using std::sqrt;
  const S s = sqrt(a.v);
  return chain(a, s, S(0.5) / s);
}
template <class S, int N>
Dual<S, N> exp(const Dual<S, N>& a) {
  using std::exp;
  const S e = exp(a.v);
  return chain(a, e, e);
}
template <class S, int N>
Dual<S, N> tanh(const Dual<S, N>& a) {
  using std::tanh;
  const S t = tanh(a.v);
  return chain(a, t, S(1.0) - t * t);
}
template <class S, int N>
Dual<S, N> abs(const Dual<S, N>& a) {
  return value_of(a.v) < 0.0 ? -a : a;
}
template <class S, int N>
Dual<S, N> max(const Dual<S, N>& a, const Dual<S, N>& b) {
  return value_of(a) >= value_of(b) ? a : b;
}
template <class S, int N>
Dual<S, N> min(const Dual<S, N>& a, const Dual<S, N>& b) {
  return value_of(a) <= value_of(b) ? a : b;
}
template <class S, int N>
Dual<S, N> log(const Dual<S, N>& a) {
  using std::log;
  return chain(a, S(log(a.v)), S(1.0) / a.v);
}
template <class S, int N>
Dual<S, N> log1p(const Dual<S, N>& a) {
  using std::log1p;
  return chain(a, S(log1p(a.v)), S(1.0) / (S(1.0) + a.v));
}
template <class S, int N>
Dual<S, N> pow(const Dual<S, N>& a, double p) {
  using std::pow;
  return chain(a, S(pow(a.v, p)), S(p) * S(pow(a.v, p - 1.0)));
}
template <class S, int N>
Dual<S, N> hypot(const Dual<S, N>& a, const Dual<S, N>& b) {
  return sqrt(a * a + b * b);
}
template <class S, int N>
Dual<S, N> clamp(const Dual<S, N>& x, double lo, double hi) {
  if (value_of(x) < lo) return Dual<S, N>(S(lo));
  if (value_of(x) > hi) return Dual<S, N>(S(hi));
  return x;
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// Wrap an angle to (-pi, pi]. The shift is a value-dependent constant, so
// the derivative is exactly 1 away from the wrap boundary.
template <class S>
S wrap_angle(const S& a) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  return a - two_pi * std::round(value_of(a) / two_pi);
}

// Numerically stable softplus bijection onto (0, inf), used to keep learned
// covariance diagonals positive.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline Var softplus(const Var& x) {
  const double w = 1.0 / (1.0 + std::exp(-x.v));  // sigmoid
  return make_node(softplus(x.v), x, w);
}
inline double softplus_inv(double y) {
  assert(y > 0.0);
  // log(exp(y) - 1), rearranged to avoid overflow for large y.
  return y > 30.0 ? y : std::log(std::expm1(y));
}

}  // namespace metadapt::ad
