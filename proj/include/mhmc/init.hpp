#ifndef MHMC_INIT_HPP
#define MHMC_INIT_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mhmc/baseline.hpp"
#include "mhmc/integrator.hpp"

namespace mhmc {

/// Tuning of the on-manifold initialisation procedures.
struct InitConfig {
  double theta_gamma = 1e-6;  ///< state-matching objective threshold
  int max_descent = 1000;     ///< descent iterations per restart
  double rate = 1e-2;         ///< adaptive-moments step size
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int restarts = 10;
  double theta_c = 1e-9;      ///< constraint tolerance of the final point

  void validate() const {
    if (!(theta_gamma > 0.0)) throw ConfigError("theta_gamma must be > 0");
    if (max_descent < 1 || restarts < 1)
      throw ConfigError("descent/restart budgets must be positive");
  }
};

namespace detail {

/// Adaptive-moments descent state (Adam; Kingma & Ba 2015).
class Adam {
 public:
  Adam(int dim, const InitConfig& cfg)
      : m_(Vec::Zero(dim)), v_(Vec::Zero(dim)), cfg_(cfg) {}

  /// In-place descent update of x along grad.
  void step(Vec& x, const Vec& grad) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_.array().matrix() +
         (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    x -= (cfg_.rate / bc1) *
         m_.cwiseQuotient(((v_ / bc2).cwiseSqrt().array() + cfg_.eps)
                              .matrix());
  }

 private:
  Vec m_, v_;
  int t_ = 0;
  InitConfig cfg_;
};

/// Per-observation whitened residuals L(z)⁻¹(y_t − h̄(x_{St})) for a reduced
/// latent vector (additive regime, noise variables at zero).
inline Mat whitened_residuals(const ModelSpec& m, const Vec& y, int T,
                              const Vec& qbar) {
  Vec q = Vec::Zero(m.latent_dim(T));
  q.head(qbar.size()) = qbar;
  GeneratedPath path = generate(m, T, q);
  Vec z = m.Z > 0 ? eval(m.g_z, qbar.head(m.U)) : Vec(0);

  Vec hin = Vec::Zero(m.Z + m.X + m.W);
  hin.head(m.Z) = z;
  Mat res(m.Y, T);
  for (int t = 0; t < T; ++t) {
    hin.segment(m.Z, m.X) = path.x.col(m.S * (t + 1));
    hin.tail(m.W).setZero();
    Vec mean = eval(m.h_obs, hin);
    Mat L(m.Y, m.W);
    for (int j = 0; j < m.W; ++j) {
      hin[m.Z + m.X + j] = 1.0;
      L.col(j) = eval(m.h_obs, hin) - mean;
      hin[m.Z + m.X + j] = 0.0;
    }
    res.col(t) = L.partialPivLu().solve(y.segment(t * m.Y, m.Y) - mean);
  }
  return res;
}

/// Scalar-generic state-matching objective
/// γ(q) = (TX)⁻¹ Σ_t ‖x_{St}(q) − x̃_t‖² used by the noiseless initialiser.
inline DifferentiableMap make_gamma_map(const ModelSpec& m, int T,
                                        Mat targets) {
  const int Q = m.latent_dim(T);
  auto body = [m, targets = std::move(targets), T](auto q, auto out) {
    using S = std::remove_cvref_t<decltype(out[0])>;
    std::vector<S> z(m.Z);
    m.g_z(q.subspan(0, m.U), std::span<S>(z));
    std::vector<S> gin(m.Z + m.V0);
    for (int i = 0; i < m.Z; ++i) gin[i] = z[i];
    for (int i = 0; i < m.V0; ++i) gin[m.Z + i] = q[m.U + i];
    std::vector<S> x(m.X);
    m.g_x0(std::span<const S>(gin), std::span<S>(x));

    std::vector<S> fin(m.Z + m.X + m.V);
    for (int i = 0; i < m.Z; ++i) fin[i] = z[i];
    S gamma(0.0);
    int v_off = m.U + m.V0;
    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < m.S; ++s) {
        for (int i = 0; i < m.X; ++i) fin[m.Z + i] = x[i];
        for (int i = 0; i < m.V; ++i) fin[m.Z + m.X + i] = q[v_off + i];
        v_off += m.V;
        m.f_delta(std::span<const S>(fin), std::span<S>(x));
      }
      for (int i = 0; i < m.X; ++i) {
        S d = x[i] - targets(i, t);
        gamma = gamma + d * d;
      }
    }
    out[0] = gamma / static_cast<double>(T * m.X);
  };
  return DifferentiableMap(Q, 1, body);
}

}  // namespace detail

/// Additive-noise initialiser: prior draw of (u, v0, v), descent on the
/// negative integrated-noise log posterior until the mean whitened residual
/// drops below one, then the noise variables w are solved exactly, which
/// puts the point on the manifold up to round-off.
inline Vec init_additive_noise(const ModelSpec& m, const Vec& y_obs, int T,
                               std::mt19937_64& rng,
                               const InitConfig& cfg = InitConfig()) {
  cfg.validate();
  BaselineTarget target(m, y_obs, T);
  const int Qbar = target.Q();
  std::normal_distribution<double> nd;

  for (int attempt = 0; attempt < cfg.restarts; ++attempt) {
    Vec qbar(Qbar);
    for (int i = 0; i < Qbar; ++i) qbar[i] = nd(rng);

    detail::Adam opt(Qbar, cfg);
    bool ready = false;
    try {
      for (int it = 0; it <= cfg.max_descent; ++it) {
        Mat res = detail::whitened_residuals(m, y_obs, T, qbar);
        double mean_norm = res.colwise().norm().sum() / T;
        if (mean_norm < 1.0) {
          ready = true;
          break;
        }
        if (it == cfg.max_descent) break;
        Vec grad;
        target.log_density(qbar, grad);
        grad = -grad;  // descend the negative log posterior
        opt.step(qbar, grad);
      }
    } catch (const NonFiniteDerivative&) {
      continue;  // blown-up path: restart from a fresh prior draw
    } catch (const NonFiniteState&) {
      continue;
    }
    if (!ready) continue;

    Vec q = Vec::Zero(m.latent_dim(T));
    q.head(Qbar) = qbar;
    Mat w = detail::whitened_residuals(m, y_obs, T, qbar);
    for (int t = 0; t < T; ++t)
      q.segment(Qbar + t * m.W, m.W) = w.col(t);

    ConstraintSystem probe(m, y_obs, T, BlockPartition{});
    if (inf_norm(probe.constraint(q)) < cfg.theta_c) return q;
  }
  throw InitFailed("additive-noise initialisation exhausted its restarts");
}

/// Observation-consistent state targets: per time index, Gauss–Newton
/// iteration x̃ ← x̃ − Hᵀ(HHᵀ)⁻¹(h̄(x̃) − y_t) from the drawn states χ (one
/// exact step in the linear case).
inline Mat target_states(const ModelSpec& m, const Vec& z, const Vec& y_obs,
                         int T, const Mat& chi, double theta_c = 1e-9) {
  Mat xt = chi;
  for (int t = 0; t < T; ++t) {
    Vec in(m.Z + m.X);
    in.head(m.Z) = z;
    bool done = false;
    for (int iter = 0; iter < 50 && !done; ++iter) {
      in.tail(m.X) = xt.col(t);
      Vec r = eval(m.h_obs, in) - y_obs.segment(t * m.Y, m.Y);
      if (r.cwiseAbs().maxCoeff() < theta_c) {
        done = true;
        break;
      }
      Mat H = jacobian(m.h_obs, in).rightCols(m.X);
      Eigen::PartialPivLU<Mat> lu(H * H.transpose());
      Vec d = lu.matrixLU().diagonal().cwiseAbs();
      if (d.minCoeff() <= 1e-14 * std::max(1.0, d.maxCoeff()))
        throw ProjectionFailed("observation Jacobian is rank deficient");
      xt.col(t) -= H.transpose() * lu.solve(r);
    }
    in.tail(m.X) = xt.col(t);
    Vec r = eval(m.h_obs, in) - y_obs.segment(t * m.Y, m.Y);
    if (!(r.cwiseAbs().maxCoeff() < theta_c))
      throw ProjectionFailed("state target iteration did not converge");
  }
  return xt;
}

namespace detail {

/// Newton projection of q onto the manifold (the h2 sub-step solve with
/// zero momentum on the identity-metric SV flow).
inline Vec newton_project(const ModelSpec& m, const Vec& y_obs, int T,
                          const Vec& q, double theta_c) {
  ConstraintSystem sys(m, y_obs, T, BlockPartition{});
  ManifoldTarget target(std::move(sys), Metric::identity(q.size()),
                        GramMode::Dense, SplitKind::SV);
  IntegratorConfig icfg;
  icfg.theta_c = theta_c;
  icfg.step_size = 1.0;
  auto Jq = target.system().jacobian_blocks(q);
  auto flow = make_flow(SplitKind::SV, target.metric(), 1.0);
  auto [q_proj, p_proj] =
      xi_h2_solve(target, Jq, q, Vec::Zero(q.size()), flow, icfg, nullptr);
  return q_proj;
}

/// Direct constraint-norm descent γ(q) = ‖c(q)‖²/C, the fallback when the
/// state-target pipeline exhausts its restarts.
inline bool constraint_norm_descent(const ModelSpec& m, const Vec& y_obs,
                                    int T, Vec& q, const InitConfig& cfg) {
  ConstraintSystem sys(m, y_obs, T, BlockPartition{});
  const int C = sys.C();
  Adam opt(static_cast<int>(q.size()), cfg);
  for (int it = 0; it < cfg.max_descent; ++it) {
    Vec c = sys.constraint(q);
    if (c.squaredNorm() / C < cfg.theta_gamma) return true;
    auto J = sys.jacobian_blocks(q);
    Vec grad = 2.0 / C * J.apply_transpose(c);
    opt.step(q, grad);
    if (!q.allFinite()) return false;
  }
  return sys.constraint(q).squaredNorm() / C < cfg.theta_gamma;
}

}  // namespace detail

/// Noiseless initialiser: prior draw → observation-consistent state targets
/// → descent of the state-matching objective to θ_γ → Newton projection.
/// Falls back to direct constraint-norm descent when the restart budget of
/// the main pipeline is exhausted.
inline Vec init_noiseless(const ModelSpec& m, const Vec& y_obs, int T,
                          std::mt19937_64& rng,
                          const InitConfig& cfg = InitConfig()) {
  cfg.validate();
  if (m.obs_kind != ObsKind::Noiseless)
    throw ConfigError("noiseless initialiser needs a noiseless regime");
  const int Q = m.latent_dim(T);
  std::normal_distribution<double> nd;
  ConstraintSystem probe(m, y_obs, T, BlockPartition{});

  for (int attempt = 0; attempt < cfg.restarts; ++attempt) {
    Vec q(Q);
    for (int i = 0; i < Q; ++i) q[i] = nd(rng);
    try {
      Vec z = m.Z > 0 ? eval(m.g_z, q.head(m.U)) : Vec(0);
      GeneratedPath path = generate(m, T, q);
      Mat chi(m.X, T);
      for (int t = 0; t < T; ++t) chi.col(t) = path.x.col(m.S * (t + 1));
      Mat xt = target_states(m, z, y_obs, T, chi, cfg.theta_c);

      DifferentiableMap gamma = detail::make_gamma_map(m, T, xt);
      detail::Adam opt(Q, cfg);
      bool reached = false;
      for (int it = 0; it < cfg.max_descent; ++it) {
        double value = 0.0;
        Vec grad = grad_scalar(gamma, q, &value);
        if (value < cfg.theta_gamma) {
          reached = true;
          break;
        }
        opt.step(q, grad);
      }
      if (!reached) continue;

      Vec q_proj = detail::newton_project(m, y_obs, T, q, cfg.theta_c);
      if (inf_norm(probe.constraint(q_proj)) < cfg.theta_c) return q_proj;
    } catch (const ProjectionFailed&) {
    } catch (const IntegratorError&) {
    } catch (const NonFiniteDerivative&) {
    } catch (const NonFiniteState&) {
    }
  }

  // Robustness ladder: direct descent on the constraint norm, then project.
  for (int attempt = 0; attempt < cfg.restarts; ++attempt) {
    Vec q(Q);
    for (int i = 0; i < Q; ++i) q[i] = nd(rng);
    try {
      if (!detail::constraint_norm_descent(m, y_obs, T, q, cfg)) continue;
      Vec q_proj = detail::newton_project(m, y_obs, T, q, cfg.theta_c);
      if (inf_norm(probe.constraint(q_proj)) < cfg.theta_c) return q_proj;
    } catch (const IntegratorError&) {
    } catch (const NonFiniteDerivative&) {
    } catch (const NonFiniteState&) {
    }
  }
  throw InitFailed("noiseless initialisation exhausted its restarts");
}

/// Regime dispatch.
inline Vec initialise(const ModelSpec& m, const Vec& y_obs, int T,
                      std::mt19937_64& rng,
                      const InitConfig& cfg = InitConfig()) {
  return m.obs_kind == ObsKind::Noiseless
             ? init_noiseless(m, y_obs, T, rng, cfg)
             : init_additive_noise(m, y_obs, T, rng, cfg);
}

}  // namespace mhmc

#endif  // MHMC_INIT_HPP
