#ifndef MHMC_INTEGRATOR_HPP
#define MHMC_INTEGRATOR_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

#include "mhmc/manifold.hpp"

namespace mhmc {

/// Tolerances and limits of the constrained step.
struct IntegratorConfig {
  double step_size = 0.1;  ///< t
  double theta_c = 1e-9;   ///< constraint residual tolerance (∞-norm)
  double theta_q = 1e-8;   ///< position-increment tolerance (∞-norm)
  int max_newton = 50;     ///< iteration cap per h2 solve
  bool check_reversibility = true;
};

/// Operation counts feeding the cost model (and n̄).  Newton iterations
/// include those of the reversibility-check solves.
struct OpCounters {
  std::int64_t constraint_evals = 0;
  std::int64_t jacobian_builds = 0;
  std::int64_t gram_factorisations = 0;
  std::int64_t grad_h1_evals = 0;
  std::int64_t projections = 0;
  std::int64_t newton_iters = 0;
  std::int64_t h2_solves = 0;
  std::int64_t integrator_steps = 0;

  OpCounters& operator+=(const OpCounters& o) {
    constraint_evals += o.constraint_evals;
    jacobian_builds += o.jacobian_builds;
    gram_factorisations += o.gram_factorisations;
    grad_h1_evals += o.grad_h1_evals;
    projections += o.projections;
    newton_iters += o.newton_iters;
    h2_solves += o.h2_solves;
    integrator_steps += o.integrator_steps;
    return *this;
  }
};

/// Phase-space point together with the derived quantities at its position.
struct ConstrainedState {
  ManifoldTarget::Cache cache;
  Vec p;

  const Vec& q() const { return cache.q; }
};

namespace detail {

/// Build the position cache, mapping factorisation failures of the Gram
/// matrix to an integrator error so the sampler rejects rather than
/// aborts.
inline ManifoldTarget::Cache cache_or_reject(const ManifoldTarget& target,
                                             const Vec& q, OpCounters* ops) {
  try {
    auto c = target.cache(q);
    if (ops != nullptr) {
      ops->jacobian_builds += 1;
      ops->gram_factorisations += 1;
    }
    return c;
  } catch (const NotPositiveDefinite&) {
    throw IntegratorError(IntegratorErrorReason::NonSpdGram);
  } catch (const SingularCapacitance&) {
    throw IntegratorError(IntegratorErrorReason::NonSpdGram);
  } catch (const SingularBlock&) {
    throw IntegratorError(IntegratorErrorReason::NonSpdGram);
  } catch (const NonFiniteState&) {
    throw IntegratorError(IntegratorErrorReason::NonFinite);
  } catch (const NonFiniteDerivative&) {
    throw IntegratorError(IntegratorErrorReason::NonFinite);
  }
}

/// Solve H·x = e with H = dc(q_j) Γqp dc(q)ᵀ.  Blocked mode uses the block
/// LU of E = V_j Γv Vᵀ + W_j Γw Wᵀ plus the rank-U correction
/// U_j Γu Uᵀ through the (non-symmetric) Woodbury identity.
struct NewtonMatrix {
  const ManifoldTarget* target = nullptr;
  const ConstraintSystem::JacobianBlocks* Jq = nullptr;
  Vec gqp;

  Vec solve(const ConstraintSystem::JacobianBlocks& Jj, const Vec& e) const {
    if (target->mode() == GramMode::Dense) {
      Mat H = Jj.dense() * gqp.asDiagonal() * Jq->dense().transpose();
      Eigen::PartialPivLU<Mat> lu(H);
      double dmin = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
      double dmax = lu.matrixLU().diagonal().cwiseAbs().maxCoeff();
      if (!(dmin > 0.0) || !std::isfinite(dmax) || dmin < 1e-14 * dmax)
        throw SingularBlock("newton matrix");
      return lu.solve(e);
    }
    const auto& sys = target->system();
    const int U = sys.layout().U;
    BlockDiagonalMatrix E;
    E.blocks.reserve(sys.blocks().size());
    for (std::size_t b = 0; b < sys.blocks().size(); ++b) {
      const auto& blk = sys.blocks()[b];
      Mat Eb = Jj.V.blocks[b] *
               gqp.segment(blk.v_begin, blk.v_len).asDiagonal() *
               Jq->V.blocks[b].transpose();
      if (blk.w_len > 0)
        Eb.noalias() += Jj.W.blocks[b] *
                        gqp.segment(blk.w_begin, blk.w_len).asDiagonal() *
                        Jq->W.blocks[b].transpose();
      E.blocks.push_back(std::move(Eb));
    }
    BlockLU Efac = block_lu(E);
    Vec Einv_e = Efac.solve(e);
    if (U == 0) return Einv_e;
    Mat Einv_Uj = Efac.solve(Jj.U);
    Mat S = Mat(gqp.head(U).cwiseInverse().asDiagonal()) +
            Jq->U.transpose() * Einv_Uj;
    Eigen::PartialPivLU<Mat> Slu(S);
    return Einv_e - Einv_Uj * Slu.solve(Jq->U.transpose() * Einv_e);
  }
};

}  // namespace detail

/// Ξ^h1_τ: p ← P(q)(p − τ ∇h1(q)).  Leaves the position (and cache)
/// untouched.
inline void xi_h1(const ManifoldTarget& target, ConstrainedState& s,
                  double tau, OpCounters* ops = nullptr) {
  Vec force = target.grad_h1(s.cache);
  s.p = target.project(s.cache, s.p - tau * force);
  if (ops != nullptr) {
    ops->grad_h1_evals += 1;
    ops->projections += 1;
  }
}

namespace detail {

/// Newton solve of the h2 position-constraint condition: find λ with
/// c(Φ_t^q(q, p − dc(q)ᵀλ)) = 0.  λ starts at zero each solve (no
/// warm-starting).  Returns the flowed pair before the final momentum
/// projection; the iteration-1 convergence short-cut accepts states whose
/// flow never leaves the manifold (affine directions).
inline std::pair<Vec, Vec> xi_h2_solve(const ManifoldTarget& target,
                                       const ConstraintSystem::JacobianBlocks&
                                           Jq,
                                       const Vec& q, const Vec& p,
                                       const FlowMap& flow,
                                       const IntegratorConfig& cfg,
                                       OpCounters* ops) {
  const auto& sys = target.system();
  if (ops != nullptr) ops->h2_solves += 1;
  Vec lambda = Vec::Zero(sys.C());
  Vec q_prev;
  NewtonMatrix newton{&target, &Jq, flow.gqp};
  try {
    for (int j = 1; j <= cfg.max_newton; ++j) {
      if (ops != nullptr) ops->newton_iters += 1;
      Vec p_imp = p - Jq.apply_transpose(lambda);
      Vec qj = flow.gqq.cwiseProduct(q) + flow.gqp.cwiseProduct(p_imp);
      Vec pj = flow.gpq.cwiseProduct(q) + flow.gpp.cwiseProduct(p_imp);
      if (!qj.allFinite() || !pj.allFinite())
        throw IntegratorError(IntegratorErrorReason::NonFinite);
      Vec e = sys.constraint(qj);
      if (ops != nullptr) ops->constraint_evals += 1;
      const bool small_residual = inf_norm(e) < cfg.theta_c;
      const bool small_move =
          j == 1 || (qj - q_prev).cwiseAbs().maxCoeff() < cfg.theta_q;
      if (small_residual && small_move) return {std::move(qj), std::move(pj)};
      auto Jj = sys.jacobian_blocks(qj);
      if (ops != nullptr) ops->jacobian_builds += 1;
      lambda += newton.solve(Jj, e);
      if (!lambda.allFinite())
        throw IntegratorError(IntegratorErrorReason::NonFinite);
      q_prev = std::move(qj);
    }
  } catch (const SingularBlock&) {
    throw IntegratorError(IntegratorErrorReason::NewtonNonConvergence);
  } catch (const NonFiniteState&) {
    throw IntegratorError(IntegratorErrorReason::NonFinite);
  } catch (const NonFiniteDerivative&) {
    throw IntegratorError(IntegratorErrorReason::NonFinite);
  }
  throw IntegratorError(IntegratorErrorReason::NewtonNonConvergence);
}

}  // namespace detail

/// Ξ^h2_t: the exactly-solvable flow composed with the Newton projection
/// back onto the constraint (RATTLE-style), followed by the cotangent
/// projection of the momentum at the new position.  Throws IntegratorError
/// on non-convergence, singular Newton matrices, or non-finite values.
inline ConstrainedState xi_h2(const ManifoldTarget& target,
                              const ConstrainedState& s,
                              const IntegratorConfig& cfg,
                              OpCounters* ops = nullptr) {
  const FlowMap flow =
      make_flow(target.split(), target.metric(), cfg.step_size);
  auto [qj, pj] =
      detail::xi_h2_solve(target, s.cache.J, s.q(), s.p, flow, cfg, ops);
  ConstrainedState out;
  out.cache = detail::cache_or_reject(target, qj, ops);
  out.p = target.project(out.cache, pj);
  if (ops != nullptr) ops->projections += 1;
  return out;
}

/// Ξ^h2_t with the explicit reversibility check: re-run the solve from the
/// momentum-flipped endpoint and require the starting position back to
/// within 2θ_q.  Both solves count toward the Newton-iteration statistics;
/// the reverse solve needs no Gram factor or momentum projection since
/// only its position is inspected.
inline ConstrainedState reversible_xi_h2(const ManifoldTarget& target,
                                         const ConstrainedState& s,
                                         const IntegratorConfig& cfg,
                                         OpCounters* ops = nullptr) {
  ConstrainedState fwd = xi_h2(target, s, cfg, ops);
  if (cfg.check_reversibility) {
    const FlowMap flow =
        make_flow(target.split(), target.metric(), cfg.step_size);
    auto [q_rev, p_rev] = detail::xi_h2_solve(target, fwd.cache.J, fwd.q(),
                                              Vec(-fwd.p), flow, cfg, ops);
    (void)p_rev;
    if ((q_rev - s.q()).cwiseAbs().maxCoeff() > 2.0 * cfg.theta_q)
      throw IntegratorError(IntegratorErrorReason::ReverseCheck);
  }
  return fwd;
}

/// One constrained integrator step Ξ^h1_{t/2} ∘ Ξ^h2_t ∘ Ξ^h1_{t/2}.
inline ConstrainedState constrained_step(const ManifoldTarget& target,
                                         const ConstrainedState& s,
                                         const IntegratorConfig& cfg,
                                         OpCounters* ops = nullptr) {
  ConstrainedState cur = s;
  xi_h1(target, cur, 0.5 * cfg.step_size, ops);
  ConstrainedState next = reversible_xi_h2(target, cur, cfg, ops);
  xi_h1(target, next, 0.5 * cfg.step_size, ops);
  if (ops != nullptr) ops->integrator_steps += 1;
  return next;
}

/// State at q with zero momentum (transitions resample it themselves).
inline ConstrainedState zero_momentum_state(const ManifoldTarget& target,
                                            const Vec& q,
                                            OpCounters* ops = nullptr) {
  ConstrainedState s;
  s.cache = detail::cache_or_reject(target, q, ops);
  s.p = Vec::Zero(target.Q());
  return s;
}

/// Draw p ~ N(0, M) projected onto the cotangent space at q.
template <class Rng>
ConstrainedState initial_state(const ManifoldTarget& target, const Vec& q,
                               Rng& rng, OpCounters* ops = nullptr) {
  ConstrainedState s;
  s.cache = detail::cache_or_reject(target, q, ops);
  std::normal_distribution<double> nd;
  Vec p(target.Q());
  for (int i = 0; i < target.Q(); ++i)
    p[i] = std::sqrt(target.metric().diag[i]) * nd(rng);
  s.p = target.project(s.cache, p);
  if (ops != nullptr) ops->projections += 1;
  return s;
}

}  // namespace mhmc

#endif  // MHMC_INTEGRATOR_HPP
