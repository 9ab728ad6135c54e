#ifndef MHMC_MODELS_HPP
#define MHMC_MODELS_HPP

#include <cmath>
#include <string>

#include "mhmc/model.hpp"

namespace mhmc {

// ---------------------------------------------------------------------------
// Stochastic FitzHugh-Nagumo model:
//   dx1 = (1/eps)(x1 - x1^3 - x2) dtau
//   dx2 = (gamma*x1 - x2 + beta) dtau + sigma dw
// Hypoelliptic (noise enters x1 only through the drift), discretised with
// the strong-order 1.5 Taylor scheme.  Parameters z = [sigma; eps; gamma;
// beta] with priors log sigma, log eps, log gamma ~ N(0,1), beta ~ N(0,1),
// and x0 | z ~ N([0; beta], I2).
// ---------------------------------------------------------------------------

namespace detail {

struct FhnDrift {
  template <class S>
  void operator()(std::span<const S> z, std::span<const S> x,
                  std::span<S> a) const {
    a[0] = (x[0] - x[0] * x[0] * x[0] - x[1]) / z[1];
    a[1] = z[2] * x[0] - x[1] + z[3];
  }
};

struct FhnDiffusion {
  template <class S>
  void operator()(std::span<const S> z, std::span<const S>,
                  std::span<S> B) const {
    B[0] = S(0.0);
    B[1] = z[0];
  }
};

struct SirDrift {
  static constexpr double kN = 763.0;
  template <class S>
  void operator()(std::span<const S> z, std::span<const S> x,
                  std::span<S> a) const {
    const double invN = 1.0 / kN;
    a[0] = -invN * exp(x[1] + x[2]) - (0.5 * invN) * exp(x[1] + x[2] - x[0]);
    a[1] = invN * exp(x[0] + x[2]) - (0.5 * invN) * exp(x[0] + x[2] - x[1]) -
           0.5 * (z[0] * exp(-x[1])) - z[0];
    a[2] = z[1] * (z[2] - x[2]);
  }
};

struct SirDiffusion {
  static constexpr double kN = 763.0;
  template <class S>
  void operator()(std::span<const S> z, std::span<const S> x,
                  std::span<S> B) const {
    const double inv_sqrtN = 1.0 / std::sqrt(kN);
    // Column-major X x Bdim = 3 x 3.
    B[0] = inv_sqrtN * exp(0.5 * (x[1] + x[2] - x[0]));
    B[1] = (-inv_sqrtN) * exp(0.5 * (x[0] + x[2] - x[1]));
    B[2] = S(0.0);
    B[3] = S(0.0);
    B[4] = sqrt(z[0]) * exp(-0.5 * x[1]);
    B[5] = S(0.0);
    B[6] = S(0.0);
    B[7] = S(0.0);
    B[8] = z[3];
  }
};

struct OuDrift {
  static constexpr double kTheta = 1.0;
  template <class S>
  void operator()(std::span<const S>, std::span<const S> x,
                  std::span<S> a) const {
    a[0] = -kTheta * x[0];
  }
};

struct OuDiffusion {
  static constexpr double kSigma = 1.0;
  template <class S>
  void operator()(std::span<const S>, std::span<const S>,
                  std::span<S> B) const {
    B[0] = S(kSigma);
  }
};

/// Build the [z; x; v] -> x' forward-operator map for a drift/diffusion
/// pair under the given scheme.
template <class Drift, class Diffusion>
DifferentiableMap make_f_delta(int X, int Bdim, int Z, Scheme scheme,
                               double delta) {
  const int V = scheme == Scheme::Taylor15 ? 2 * Bdim : Bdim;
  return DifferentiableMap(Z + X + V, X, [=](auto in, auto out) {
    using S = std::remove_cvref_t<decltype(in[0])>;
    std::span<const S> z = in.subspan(0, Z);
    std::span<const S> x = in.subspan(Z, X);
    std::span<const S> v = in.subspan(Z + X, V);
    if (scheme == Scheme::Taylor15)
      taylor15_step<S>(Drift{}, Diffusion{}, X, Bdim, z, x, v, delta, out);
    else
      euler_maruyama_step<S>(Drift{}, Diffusion{}, X, Bdim, z, x, v, delta,
                             out);
  });
}

}  // namespace detail

/// FitzHugh-Nagumo.  noisy=false: noiseless observation y = x1;
/// noisy=true: y = x1 + sigma_y * w with fixed known sigma_y.
inline ModelSpec fhn_model(bool noisy, double sigma_y = 0.1) {
  ModelSpec m;
  m.name = noisy ? "fhn-noisy" : "fhn-noiseless";
  m.X = 2;
  m.Bdim = 1;
  m.Z = 4;
  m.U = 4;
  m.V0 = 2;
  m.scheme = Scheme::Taylor15;
  m.V = 2;
  m.Y = 1;
  m.obs_kind = noisy ? ObsKind::AdditiveGaussian : ObsKind::Noiseless;
  m.W = noisy ? 1 : 0;
  m.sigma_y = noisy ? sigma_y : 0.0;
  m.S = 10;
  m.Delta = 0.2;
  m.param_names = {"sigma", "eps", "gamma", "beta"};
  m.true_z.resize(4);
  m.true_z << 0.3, 0.1, 1.5, 0.8;
  m.x0_true.resize(2);
  m.x0_true << -0.5, 0.2;

  m.f_delta = detail::make_f_delta<detail::FhnDrift, detail::FhnDiffusion>(
      m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  m.g_z = DifferentiableMap(4, 4, [](auto u, auto z) {
    z[0] = exp(u[0]);
    z[1] = exp(u[1]);
    z[2] = exp(u[2]);
    z[3] = u[3];
  });
  m.g_x0 = DifferentiableMap(4 + 2, 2, [](auto in, auto x0) {
    // x0 | z ~ N([0; beta], I2); in = [z; v0].
    x0[0] = in[4];
    x0[1] = in[3] + in[5];
  });
  const int W = m.W;
  const double sy = m.sigma_y;
  m.h_obs = DifferentiableMap(4 + 2 + W, 1, [W, sy](auto in, auto y) {
    if (W > 0)
      y[0] = in[4] + sy * in[6];
    else
      y[0] = in[4];
  });
  return m;
}

/// Susceptible-infected-recovered model on the log-transformed state
/// x = [log s; log i; log c], with population N = 763, s(0) = 762,
/// i(0) = 1 fixed and daily observations of i = exp(x2) under additive
/// noise of unknown scale sigma_y (a model parameter).
/// Parameters z = [gamma; alpha; beta; sigma; sigma_y] with priors
/// log gamma, log alpha ~ N(0,1), beta ~ N(0,1), log sigma ~ N(-3,1),
/// log sigma_y ~ N(0,1); x3(0) ~ N(0,1).
inline ModelSpec sir_model() {
  ModelSpec m;
  m.name = "sir";
  m.X = 3;
  m.Bdim = 3;
  m.Z = 5;
  m.U = 5;
  m.V0 = 1;
  m.scheme = Scheme::EulerMaruyama;
  m.V = 3;
  m.Y = 1;
  m.obs_kind = ObsKind::AdditiveGaussian;
  m.W = 1;
  m.sigma_y = 0.0;  // from z
  m.S = 20;
  m.Delta = 1.0;
  m.param_names = {"gamma", "alpha", "beta", "sigma", "sigma_y"};
  // Representative parameters for simulation smoke tests (prior medians
  // except a mildly informative beta).
  m.true_z.resize(5);
  m.true_z << 0.5, 1.0, 0.0, std::exp(-3.0), 1.0;

  m.f_delta = detail::make_f_delta<detail::SirDrift, detail::SirDiffusion>(
      m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  m.g_z = DifferentiableMap(5, 5, [](auto u, auto z) {
    z[0] = exp(u[0]);
    z[1] = exp(u[1]);
    z[2] = u[2];
    z[3] = exp(u[3] - 3.0);
    z[4] = exp(u[4]);
  });
  const double log_s0 = std::log(762.0);
  m.g_x0 = DifferentiableMap(5 + 1, 3, [log_s0](auto in, auto x0) {
    using S = std::remove_cvref_t<decltype(in[0])>;
    x0[0] = S(log_s0);  // log s(0) = log 762, fixed
    x0[1] = S(0.0);     // log i(0) = log 1, fixed
    x0[2] = in[5];      // log c(0) ~ N(0,1) via v0
  });
  m.h_obs = DifferentiableMap(5 + 3 + 1, 1, [](auto in, auto y) {
    // y = exp(x2) + sigma_y * w, sigma_y = z[4].
    y[0] = exp(in[6]) + in[4] * in[8];
  });
  return m;
}

/// Ornstein-Uhlenbeck validation model: dx = -theta x dtau + sigma db with
/// theta = sigma = 1 fixed (Z = 0), noiseless linear observation y = x.
/// Every map is affine in (v0, v), so the conditioned path is Gaussian and
/// an analytic conditioning oracle exists.
inline ModelSpec ou_model() {
  ModelSpec m;
  m.name = "ou";
  m.X = 1;
  m.Bdim = 1;
  m.Z = 0;
  m.U = 0;
  m.V0 = 1;
  m.scheme = Scheme::EulerMaruyama;
  m.V = 1;
  m.Y = 1;
  m.obs_kind = ObsKind::Noiseless;
  m.W = 0;
  m.S = 8;
  m.Delta = 0.25;
  m.param_names = {};
  m.true_z.resize(0);
  m.x0_true.resize(1);
  m.x0_true << 1.0;

  m.f_delta = detail::make_f_delta<detail::OuDrift, detail::OuDiffusion>(
      m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  m.g_z = DifferentiableMap(0, 0, [](auto, auto) {});
  m.g_x0 = DifferentiableMap(1, 1, [](auto in, auto x0) {
    x0[0] = 1.0 + in[0];  // x0 ~ N(1, 1)
  });
  m.h_obs = DifferentiableMap(1, 1, [](auto in, auto y) { y[0] = in[0]; });
  return m;
}

/// Change the number of discretisation steps per observation interval and
/// rebuild the forward operator (its per-step delta depends on S).
inline void set_model_steps(ModelSpec& m, int S) {
  if (S < 1) throw ConfigError("steps per interval must be positive");
  m.S = S;
  if (m.name == "fhn-noiseless" || m.name == "fhn-noisy")
    m.f_delta = detail::make_f_delta<detail::FhnDrift, detail::FhnDiffusion>(
        m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  else if (m.name == "sir")
    m.f_delta = detail::make_f_delta<detail::SirDrift, detail::SirDiffusion>(
        m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  else if (m.name == "ou")
    m.f_delta = detail::make_f_delta<detail::OuDrift, detail::OuDiffusion>(
        m.X, m.Bdim, m.Z, m.scheme, m.step_delta());
  else
    throw ConfigError("cannot rebuild forward operator for: " + m.name);
}

/// Model selection by CLI name.
inline ModelSpec make_model(const std::string& name, double sigma_y = 0.1,
                            int steps = 0) {
  ModelSpec m;
  if (name == "fhn-noiseless")
    m = fhn_model(false);
  else if (name == "fhn-noisy")
    m = fhn_model(true, sigma_y);
  else if (name == "sir")
    m = sir_model();
  else if (name == "ou")
    m = ou_model();
  else
    throw ConfigError("unknown model: " + name);
  if (steps > 0) set_model_steps(m, steps);
  return m;
}

}  // namespace mhmc

#endif  // MHMC_MODELS_HPP
