#ifndef MHMC_DUAL_HPP
#define MHMC_DUAL_HPP

#include <cmath>
#include <type_traits>

namespace mhmc {

// Make the std:: math functions visible alongside the Dual/Var overloads so
// that generic model code written with unqualified calls resolves for every
// supported scalar, including plain double.
using std::cos;
using std::exp;
using std::log;
using std::pow;
using std::sin;
using std::sqrt;

/// Forward-mode scalar: a (value, tangent) pair with the usual dual-number
/// arithmetic.  T may itself be a differentiation scalar, which is how the
/// second-order contraction and the drift-Jacobian corrections of the
/// order-1.5 scheme are obtained by nesting.
///
/// The supported vocabulary is deliberately closed: +, -, *, /, exp, log,
/// sin, cos, sqrt and pow.  Model functions must be expressed in it.
template <class T>
struct Dual {
  T v{};  ///< value component
  T d{};  ///< tangent component

  Dual() = default;
  Dual(T value) : v(value), d(T(0.0)) {}  // NOLINT: implicit promotion wanted
  Dual(T value, T tangent) : v(value), d(tangent) {}
  // Promote a plain double constant (needed when T is itself a wrapper).
  template <class U = T>
    requires(!std::is_same_v<U, double>)
  Dual(double value) : v(T(value)), d(T(0.0)) {}  // NOLINT
};

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.v + b.v, a.d + b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.v - b.v, a.d - b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a) {
  return {-a.v, -a.d};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  T q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

// Mixed double-constant forms (constants carry zero tangent).
template <class T>
Dual<T> operator+(const Dual<T>& a, double b) { return {a.v + b, a.d}; }
template <class T>
Dual<T> operator+(double a, const Dual<T>& b) { return {a + b.v, b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a, double b) { return {a.v - b, a.d}; }
template <class T>
Dual<T> operator-(double a, const Dual<T>& b) { return {a - b.v, -b.d}; }
template <class T>
Dual<T> operator*(const Dual<T>& a, double b) { return {a.v * b, a.d * b}; }
template <class T>
Dual<T> operator*(double a, const Dual<T>& b) { return {a * b.v, a * b.d}; }
template <class T>
Dual<T> operator/(const Dual<T>& a, double b) { return {a.v / b, a.d / b}; }
template <class T>
Dual<T> operator/(double a, const Dual<T>& b) {
  T q = a / b.v;
  return {q, -q * b.d / b.v};
}

template <class T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  T e = exp(a.v);
  return {e, e * a.d};
}
template <class T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.v), a.d / a.v};
}
template <class T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.v), cos(a.v) * a.d};
}
template <class T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.v), -1.0 * (sin(a.v) * a.d)};
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  T s = sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
/// Power with constant exponent (the only form the vocabulary requires).
template <class T>
Dual<T> pow(const Dual<T>& a, double e) {
  using std::pow;
  return {pow(a.v, e), e * pow(a.v, e - 1.0) * a.d};
}

}  // namespace mhmc

#endif  // MHMC_DUAL_HPP
