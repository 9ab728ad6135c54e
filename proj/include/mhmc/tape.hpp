#ifndef MHMC_TAPE_HPP
#define MHMC_TAPE_HPP

#include <cassert>
#include <cstddef>
#include <vector>

#include "mhmc/dual.hpp"

namespace mhmc {

/// Recorded evaluation trace for reverse-mode accumulation.
///
/// Each node stores at most two parents with the local partial derivatives
/// of the node value with respect to them.  The payload type P is double for
/// plain gradients and Dual<double> for the reverse-over-forward nesting used
/// by the Gram log-determinant gradient.
template <class P>
class Tape {
 public:
  struct Node {
    int a = -1;  ///< first parent index (-1: none)
    int b = -1;  ///< second parent index (-1: none)
    P wa{};      ///< d(node)/d(parent a)
    P wb{};      ///< d(node)/d(parent b)
  };

  void reserve(std::size_t n) { nodes_.reserve(n); }
  void clear() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  int leaf() {
    nodes_.push_back(Node{});
    return size() - 1;
  }
  int unary(int a, P wa) {
    nodes_.push_back(Node{a, -1, wa, P{}});
    return size() - 1;
  }
  int binary(int a, int b, P wa, P wb) {
    nodes_.push_back(Node{a, b, wa, wb});
    return size() - 1;
  }

  /// Reverse sweep.  `adjoint` must be sized to size() with seeds already
  /// placed at the output nodes; on return it holds the adjoint of every
  /// node, in particular of the input leaves.
  void sweep(std::vector<P>& adjoint) const {
    assert(adjoint.size() == nodes_.size());
    for (int i = size() - 1; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (n.a >= 0) adjoint[n.a] = adjoint[n.a] + n.wa * adjoint[i];
      if (n.b >= 0) adjoint[n.b] = adjoint[n.b] + n.wb * adjoint[i];
    }
  }

 private:
  std::vector<Node> nodes_;
};

/// Reverse-mode scalar: value plus a node index on a Tape.  A Var with a
/// null tape pointer is a constant (no derivative flows through it); this is
/// how conditioned states and literals enter recorded expressions.
template <class P>
struct Var {
  P v{};
  int idx = -1;
  Tape<P>* tape = nullptr;

  Var() = default;
  Var(double value) : v(P(value)) {}  // NOLINT: constant promotion wanted
  template <class Q = P>
    requires(!std::is_same_v<Q, double>)
  Var(P value) : v(value) {}  // NOLINT
  Var(P value, int index, Tape<P>* t) : v(value), idx(index), tape(t) {}

  static Var input(P value, Tape<P>& t) { return Var(value, t.leaf(), &t); }
};

namespace detail {
template <class P>
inline Tape<P>* common_tape(const Var<P>& a, const Var<P>& b) {
  assert(a.tape == nullptr || b.tape == nullptr || a.tape == b.tape);
  return a.tape != nullptr ? a.tape : b.tape;
}
}  // namespace detail

template <class P>
Var<P> operator+(const Var<P>& a, const Var<P>& b) {
  Tape<P>* t = detail::common_tape(a, b);
  P v = a.v + b.v;
  if (t == nullptr) return Var<P>(v);
  if (a.tape && b.tape) return {v, t->binary(a.idx, b.idx, P(1.0), P(1.0)), t};
  if (a.tape) return {v, t->unary(a.idx, P(1.0)), t};
  return {v, t->unary(b.idx, P(1.0)), t};
}

template <class P>
Var<P> operator-(const Var<P>& a, const Var<P>& b) {
  Tape<P>* t = detail::common_tape(a, b);
  P v = a.v - b.v;
  if (t == nullptr) return Var<P>(v);
  if (a.tape && b.tape) return {v, t->binary(a.idx, b.idx, P(1.0), P(-1.0)), t};
  if (a.tape) return {v, t->unary(a.idx, P(1.0)), t};
  return {v, t->unary(b.idx, P(-1.0)), t};
}

template <class P>
Var<P> operator-(const Var<P>& a) {
  if (a.tape == nullptr) return Var<P>(-a.v);
  return {-a.v, a.tape->unary(a.idx, P(-1.0)), a.tape};
}

template <class P>
Var<P> operator*(const Var<P>& a, const Var<P>& b) {
  Tape<P>* t = detail::common_tape(a, b);
  P v = a.v * b.v;
  if (t == nullptr) return Var<P>(v);
  if (a.tape && b.tape) return {v, t->binary(a.idx, b.idx, b.v, a.v), t};
  if (a.tape) return {v, t->unary(a.idx, b.v), t};
  return {v, t->unary(b.idx, a.v), t};
}

template <class P>
Var<P> operator/(const Var<P>& a, const Var<P>& b) {
  Tape<P>* t = detail::common_tape(a, b);
  P v = a.v / b.v;
  if (t == nullptr) return Var<P>(v);
  P inv_b = P(1.0) / b.v;
  if (a.tape && b.tape)
    return {v, t->binary(a.idx, b.idx, inv_b, -v * inv_b), t};
  if (a.tape) return {v, t->unary(a.idx, inv_b), t};
  return {v, t->unary(b.idx, -v * inv_b), t};
}

// Mixed double-constant forms.
template <class P>
Var<P> operator+(const Var<P>& a, double b) { return a + Var<P>(b); }
template <class P>
Var<P> operator+(double a, const Var<P>& b) { return Var<P>(a) + b; }
template <class P>
Var<P> operator-(const Var<P>& a, double b) { return a - Var<P>(b); }
template <class P>
Var<P> operator-(double a, const Var<P>& b) { return Var<P>(a) - b; }
template <class P>
Var<P> operator*(const Var<P>& a, double b) { return a * Var<P>(b); }
template <class P>
Var<P> operator*(double a, const Var<P>& b) { return Var<P>(a) * b; }
template <class P>
Var<P> operator/(const Var<P>& a, double b) { return a / Var<P>(b); }
template <class P>
Var<P> operator/(double a, const Var<P>& b) { return Var<P>(a) / b; }

template <class P>
Var<P> exp(const Var<P>& a) {
  using std::exp;
  P e = exp(a.v);
  if (a.tape == nullptr) return Var<P>(e);
  return {e, a.tape->unary(a.idx, e), a.tape};
}
template <class P>
Var<P> log(const Var<P>& a) {
  using std::log;
  P v = log(a.v);
  if (a.tape == nullptr) return Var<P>(v);
  return {v, a.tape->unary(a.idx, P(1.0) / a.v), a.tape};
}
template <class P>
Var<P> sin(const Var<P>& a) {
  using std::cos;
  using std::sin;
  P v = sin(a.v);
  if (a.tape == nullptr) return Var<P>(v);
  return {v, a.tape->unary(a.idx, cos(a.v)), a.tape};
}
template <class P>
Var<P> cos(const Var<P>& a) {
  using std::cos;
  using std::sin;
  P v = cos(a.v);
  if (a.tape == nullptr) return Var<P>(v);
  return {v, a.tape->unary(a.idx, -sin(a.v)), a.tape};
}
template <class P>
Var<P> sqrt(const Var<P>& a) {
  using std::sqrt;
  P s = sqrt(a.v);
  if (a.tape == nullptr) return Var<P>(s);
  return {s, a.tape->unary(a.idx, P(0.5) / s), a.tape};
}
/// Power with constant exponent.
template <class P>
Var<P> pow(const Var<P>& a, double e) {
  using std::pow;
  P v = pow(a.v, e);
  if (a.tape == nullptr) return Var<P>(v);
  return {v, a.tape->unary(a.idx, P(e) * pow(a.v, e - 1.0)), a.tape};
}

}  // namespace mhmc

#endif  // MHMC_TAPE_HPP
