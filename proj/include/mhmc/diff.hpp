#ifndef MHMC_DIFF_HPP
#define MHMC_DIFF_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mhmc/dual.hpp"
#include "mhmc/errors.hpp"
#include "mhmc/tape.hpp"

namespace mhmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using FwdScalar = Dual<double>;           // forward mode
using RevScalar = Var<double>;            // reverse mode
using RevFwdScalar = Var<Dual<double>>;   // reverse over forward

/// A vector function with an evaluation rule expressed over a generic
/// scalar.  The rule is instantiated once for each differentiation scalar at
/// construction time and type-erased, so maps can be composed and stored at
/// runtime (e.g. one partial-constraint map per conditioning block).
class DifferentiableMap {
 public:
  DifferentiableMap() = default;

  /// F must be callable as f(std::span<const S>, std::span<S>) for each
  /// supported scalar S.
  template <class F>
  DifferentiableMap(int in_dim, int out_dim, F f)
      : in_dim_(in_dim),
        out_dim_(out_dim),
        f_plain_(f),
        f_fwd_(f),
        f_rev_(f),
        f_revfwd_(f) {}

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  bool valid() const { return in_dim_ >= 0; }

  void operator()(std::span<const double> x, std::span<double> y) const {
    f_plain_(x, y);
  }
  void operator()(std::span<const FwdScalar> x, std::span<FwdScalar> y) const {
    f_fwd_(x, y);
  }
  void operator()(std::span<const RevScalar> x, std::span<RevScalar> y) const {
    f_rev_(x, y);
  }
  void operator()(std::span<const RevFwdScalar> x,
                  std::span<RevFwdScalar> y) const {
    f_revfwd_(x, y);
  }

 private:
  template <class S>
  using ErasedFn = std::function<void(std::span<const S>, std::span<S>)>;

  int in_dim_ = -1;
  int out_dim_ = -1;
  ErasedFn<double> f_plain_;
  ErasedFn<FwdScalar> f_fwd_;
  ErasedFn<RevScalar> f_rev_;
  ErasedFn<RevFwdScalar> f_revfwd_;
};

/// Plain evaluation.
inline Vec eval(const DifferentiableMap& f, const Vec& x) {
  Vec y(f.out_dim());
  f(std::span<const double>(x.data(), x.size()),
    std::span<double>(y.data(), y.size()));
  if (!y.allFinite()) throw NonFiniteState("eval");
  return y;
}

/// Jacobian-vector product df(x)·v by one forward-mode pass.  Cost is a
/// constant factor over evaluating f.
inline Vec jvp(const DifferentiableMap& f, const Vec& x, const Vec& v,
               Vec* value_out = nullptr) {
  std::vector<FwdScalar> xs(x.size()), ys(f.out_dim());
  for (int i = 0; i < x.size(); ++i) xs[i] = FwdScalar(x[i], v[i]);
  f(std::span<const FwdScalar>(xs), std::span<FwdScalar>(ys));
  Vec tangent(f.out_dim());
  for (int i = 0; i < f.out_dim(); ++i) {
    tangent[i] = ys[i].d;
    if (value_out != nullptr) (*value_out)[i] = ys[i].v;
    if (!std::isfinite(ys[i].d) || !std::isfinite(ys[i].v))
      throw NonFiniteDerivative("jvp");
  }
  return tangent;
}

namespace detail {

/// Record f on a tape; returns the output Vars.  Leaf i of the tape is
/// input i.
template <class P>
std::vector<Var<P>> record(const DifferentiableMap& f,
                           std::span<const P> x, Tape<P>& tape) {
  std::vector<Var<P>> xs(x.size());
  std::vector<Var<P>> ys(f.out_dim());
  for (std::size_t i = 0; i < x.size(); ++i)
    xs[i] = Var<P>::input(x[i], tape);
  f(std::span<const Var<P>>(xs), std::span<Var<P>>(ys));
  return ys;
}

}  // namespace detail

/// Vector-Jacobian product uᵀ·df(x) by one reverse-mode sweep over a
/// recorded trace.
inline Vec vjp(const DifferentiableMap& f, const Vec& x, const Vec& u,
               Vec* value_out = nullptr) {
  Tape<double> tape;
  tape.reserve(16 * static_cast<std::size_t>(x.size() + f.out_dim()));
  std::vector<double> xs(x.data(), x.data() + x.size());
  auto ys = detail::record<double>(f, xs, tape);
  std::vector<double> adj(tape.size(), 0.0);
  for (int i = 0; i < f.out_dim(); ++i) {
    if (value_out != nullptr) (*value_out)[i] = ys[i].v;
    if (ys[i].tape != nullptr) adj[ys[i].idx] += u[i];
  }
  tape.sweep(adj);
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    g[i] = adj[i];
    if (!std::isfinite(g[i])) throw NonFiniteDerivative("vjp");
  }
  return g;
}

/// Full Jacobian.  Semantically the columns are jvps against the standard
/// basis; assembled by whichever mode is cheaper (one reverse trace with
/// out_dim sweeps when out_dim < in_dim, else in_dim forward passes), per
/// the cost corollary for dense Jacobians.
inline Mat jacobian(const DifferentiableMap& f, const Vec& x) {
  const int n = f.in_dim();
  const int m = f.out_dim();
  Mat J(m, n);
  if (m < n) {
    Tape<double> tape;
    tape.reserve(32 * static_cast<std::size_t>(n + m));
    std::vector<double> xs(x.data(), x.data() + x.size());
    auto ys = detail::record<double>(f, xs, tape);
    std::vector<double> adj;
    for (int i = 0; i < m; ++i) {
      adj.assign(tape.size(), 0.0);
      if (ys[i].tape != nullptr) adj[ys[i].idx] = 1.0;
      tape.sweep(adj);
      for (int j = 0; j < n; ++j) J(i, j) = adj[j];
    }
  } else {
    Vec v = Vec::Zero(n);
    for (int j = 0; j < n; ++j) {
      v[j] = 1.0;
      J.col(j) = jvp(f, x, v);
      v[j] = 0.0;
    }
  }
  if (!J.allFinite()) throw NonFiniteDerivative("jacobian");
  return J;
}

/// Gradient of a scalar map (out_dim == 1) by one reverse sweep.
inline Vec grad_scalar(const DifferentiableMap& f, const Vec& x,
                       double* value_out = nullptr) {
  Vec u(1);
  u[0] = 1.0;
  Vec value(1);
  Vec g = vjp(f, x, u, &value);
  if (value_out != nullptr) *value_out = value[0];
  return g;
}

/// Second-order contraction for the Gram log-determinant gradient:
/// returns ∇_q ⟨K, ∂c(q)⟩_F with K treated as a constant.  The full
/// log-det gradient is 2× this value with K = G⁻¹·∂c(q)·M⁻¹, from
/// d log det G = 2 tr(G⁻¹ ∂c M⁻¹ d∂cᵀ).
///
/// Implemented reverse-over-forward: for each constraint row i a trace of c
/// is recorded in dual arithmetic with input tangents K(i,·); seeding the
/// adjoint of output i and sweeping yields leaf adjoints whose tangent
/// components are ∇_q (∂c_i(q)·K(i,·)ᵀ), which sum to the result.
inline Vec gram_logdet_grad(const DifferentiableMap& c, const Vec& q,
                            const Mat& K) {
  const int n = c.in_dim();
  const int m = c.out_dim();
  Vec g = Vec::Zero(n);
  std::vector<FwdScalar> xs(n);
  Tape<FwdScalar> tape;
  std::vector<FwdScalar> adj;
  for (int i = 0; i < m; ++i) {
    tape.clear();
    for (int j = 0; j < n; ++j) xs[j] = FwdScalar(q[j], K(i, j));
    auto ys = detail::record<FwdScalar>(c, xs, tape);
    adj.assign(tape.size(), FwdScalar(0.0));
    if (ys[i].tape != nullptr) adj[ys[i].idx] = FwdScalar(1.0, 0.0);
    tape.sweep(adj);
    for (int j = 0; j < n; ++j) g[j] += adj[j].d;
  }
  if (!g.allFinite()) throw NonFiniteDerivative("gram_logdet_grad");
  return g;
}

/// Central finite differences, used only as a test oracle.
inline Mat fd_jacobian(const DifferentiableMap& f, const Vec& x,
                       double eps = 1e-6) {
  Mat J(f.out_dim(), f.in_dim());
  Vec xp = x, xm = x;
  for (int j = 0; j < f.in_dim(); ++j) {
    xp[j] = x[j] + eps;
    xm[j] = x[j] - eps;
    J.col(j) = (eval(f, xp) - eval(f, xm)) / (2.0 * eps);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

}  // namespace mhmc

#endif  // MHMC_DIFF_HPP
