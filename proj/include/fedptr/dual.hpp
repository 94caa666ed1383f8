#pragma once

#include <Eigen/Core>
#include <cmath>

namespace fedptr {

// Forward-mode scalar: value + directional derivative. Used to push a
// tangent through the analytic backward pass, which yields exact
// Hessian-vector products and mixed parameter/feature second derivatives
// without a tape.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design
  Dual(double value, double deriv) : v(value), d(deriv) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
inline Dual operator/(Dual a, Dual b) {
  double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
}
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual& operator-=(Dual& a, Dual b) { return a = a - b; }
inline Dual& operator*=(Dual& a, Dual b) { return a = a * b; }
inline Dual& operator/=(Dual& a, Dual b) { return a = a / b; }

inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }
inline bool operator<=(Dual a, Dual b) { return a.v <= b.v; }
inline bool operator>=(Dual a, Dual b) { return a.v >= b.v; }
inline bool operator==(Dual a, Dual b) { return a.v == b.v; }
inline bool operator!=(Dual a, Dual b) { return a.v != b.v; }

inline Dual exp(Dual a) {
  double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual log1p(Dual a) { return {std::log1p(a.v), a.d / (1.0 + a.v)}; }
inline Dual tanh(Dual a) {
  double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}
inline Dual sqrt(Dual a) {
  double s = std::sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
inline Dual abs(Dual a) { return a.v < 0.0 ? -a : a; }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

}  // namespace fedptr

namespace Eigen {
template <>
struct NumTraits<fedptr::Dual> : NumTraits<double> {
  typedef fedptr::Dual Real;
  typedef fedptr::Dual NonInteger;
  typedef fedptr::Dual Nested;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 4,
    MulCost = 6,
  };
};
}  // namespace Eigen
