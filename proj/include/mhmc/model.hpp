#ifndef MHMC_MODEL_HPP
#define MHMC_MODEL_HPP

#include <Eigen/Dense>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mhmc/diff.hpp"
#include "mhmc/errors.hpp"

namespace mhmc {

/// Time-discretisation scheme of the forward operator.
enum class Scheme {
  EulerMaruyama,  ///< V = B noise inputs per step
  Taylor15,       ///< strong-order 1.5 Taylor; V = 2B noise inputs per step
};

/// Observation regime.
enum class ObsKind {
  Noiseless,         ///< W = 0, exact observation function
  AdditiveGaussian,  ///< W = Y, y = hbar(x) + scale * w
};

/// One Euler-Maruyama step: x + delta*a(x,z) + sqrt(delta)*B(x,z)*v.
/// Drift must be callable as drift(z, x, a_out) and Diffusion as
/// diffusion(z, x, B_out) with B_out of length X*Bdim (column-major), both
/// generic over the differentiation scalar.
template <class S, class Drift, class Diffusion>
void euler_maruyama_step(Drift drift, Diffusion diffusion, int X, int Bdim,
                         std::span<const S> z, std::span<const S> x,
                         std::span<const S> v, double delta,
                         std::span<S> out) {
  std::vector<S> a(X), B(X * Bdim);
  drift(z, x, std::span<S>(a));
  diffusion(z, x, std::span<S>(B));
  const double sq = std::sqrt(delta);
  for (int i = 0; i < X; ++i) {
    S acc = x[i] + delta * a[i];
    for (int j = 0; j < Bdim; ++j) acc = acc + sq * (B[i + X * j] * v[j]);
    out[i] = acc;
  }
}

/// One strong-order 1.5 Taylor step:
///   x + delta*a + (delta^2/2)*da*a + sqrt(delta)*B*v1
///     + (delta^(3/2)/2)*da*B*(v1 + v2/sqrt(3)),
/// with da the state Jacobian of the drift, applied through forward-mode
/// directional derivatives (no materialised Jacobian).  v has length 2*Bdim
/// split as [v1; v2].
template <class S, class Drift, class Diffusion>
void taylor15_step(Drift drift, Diffusion diffusion, int X, int Bdim,
                   std::span<const S> z, std::span<const S> x,
                   std::span<const S> v, double delta, std::span<S> out) {
  using DS = Dual<S>;
  std::vector<S> a(X), B(X * Bdim);
  drift(z, x, std::span<S>(a));
  diffusion(z, x, std::span<S>(B));

  // Noise direction B*(v1 + v2/sqrt(3)).
  const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
  std::vector<S> bdir(X);
  for (int i = 0; i < X; ++i) {
    S acc = S(0.0);
    for (int j = 0; j < Bdim; ++j)
      acc = acc + B[i + X * j] * (v[j] + inv_sqrt3 * v[Bdim + j]);
    bdir[i] = acc;
  }

  // Directional derivatives da*a and da*bdir by one nested forward pass
  // each: evaluate the drift in Dual<S> arithmetic along the direction.
  std::vector<DS> zd(z.size()), xd(X), ad(X);
  for (std::size_t i = 0; i < z.size(); ++i) zd[i] = DS(z[i], S(0.0));
  auto drift_jvp = [&](const std::vector<S>& dir, std::vector<S>& res) {
    for (int i = 0; i < X; ++i) xd[i] = DS(x[i], dir[i]);
    drift(std::span<const DS>(zd), std::span<const DS>(xd),
          std::span<DS>(ad));
    for (int i = 0; i < X; ++i) res[i] = ad[i].d;
  };
  std::vector<S> da_a(X), da_b(X);
  drift_jvp(a, da_a);
  drift_jvp(bdir, da_b);

  const double sq = std::sqrt(delta);
  for (int i = 0; i < X; ++i) {
    S acc = x[i] + delta * a[i] + (0.5 * delta * delta) * da_a[i] +
            (0.5 * delta * sq) * da_b[i];
    for (int j = 0; j < Bdim; ++j) acc = acc + sq * (B[i + X * j] * v[j]);
    out[i] = acc;
  }
}

/// A diffusion + observation model: dimensions, generators, forward
/// operator and observation function, all expressed over generic scalars
/// (type-erased through DifferentiableMap).  By construction of the
/// generators the reference density of the non-centred noise variables
/// (u, v0, v, w) is standard normal in every built-in model.
struct ModelSpec {
  std::string name;

  int X = 0;     ///< state dimension
  int Bdim = 0;  ///< Wiener dimension
  int Z = 0;     ///< parameter dimension
  int U = 0;     ///< parameter noise dimension (= Z for the built-ins)
  int V0 = 0;    ///< initial-state noise dimension
  int V = 0;     ///< per-step noise dimension (B or 2B by scheme)
  int W = 0;     ///< per-observation noise dimension (0 or Y)
  int Y = 0;     ///< observation dimension

  int S = 1;          ///< discretisation steps per inter-observation interval
  double Delta = 1.;  ///< inter-observation interval
  Scheme scheme = Scheme::EulerMaruyama;
  ObsKind obs_kind = ObsKind::Noiseless;
  double sigma_y = 0.0;  ///< fixed observation noise scale (0: taken from z)

  DifferentiableMap f_delta;  ///< [z; x; v] -> next state
  DifferentiableMap g_z;      ///< u -> z (natural parameters)
  DifferentiableMap g_x0;     ///< [z; v0] -> initial state
  DifferentiableMap h_obs;    ///< [z; x; w] -> observation

  std::vector<std::string> param_names;  ///< natural-parameter names (len Z)

  Vec true_z;   ///< ground-truth natural parameters for data simulation
  Vec x0_true;  ///< ground-truth initial state for data simulation

  double step_delta() const { return Delta / S; }

  /// Latent dimension Q = U + V0 + S*T*V + T*W.
  int latent_dim(int T) const { return U + V0 + S * T * V + T * W; }
};

/// Simulated observations plus the generating path.
struct SimulatedData {
  Vec y;     ///< stacked observations, length T*Y
  Mat path;  ///< states at every step, X x (S*T+1), column 0 = x0
};

/// Generate observations from the ground-truth parameters with a dedicated
/// seeded generator (kept distinct from chain generators).
inline SimulatedData simulate(const ModelSpec& m, int T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  SimulatedData out;
  out.y.resize(T * m.Y);
  out.path.resize(m.X, m.S * T + 1);

  Vec x = m.x0_true;
  if (x.size() == 0) {
    // Draw the initial state from its generator.
    Vec zin(m.Z + m.V0);
    zin.head(m.Z) = m.true_z;
    for (int i = 0; i < m.V0; ++i) zin[m.Z + i] = nd(rng);
    x = eval(m.g_x0, zin);
  }
  out.path.col(0) = x;

  Vec fin(m.Z + m.X + m.V);
  fin.head(m.Z) = m.true_z;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < m.S; ++s) {
      fin.segment(m.Z, m.X) = x;
      for (int i = 0; i < m.V; ++i) fin[m.Z + m.X + i] = nd(rng);
      x = eval(m.f_delta, fin);
      out.path.col(1 + t * m.S + s) = x;
    }
    Vec hin(m.Z + m.X + m.W);
    hin.head(m.Z) = m.true_z;
    hin.segment(m.Z, m.X) = x;
    for (int i = 0; i < m.W; ++i) hin[m.Z + m.X + i] = nd(rng);
    out.y.segment(t * m.Y, m.Y) = eval(m.h_obs, hin);
  }
  return out;
}

}  // namespace mhmc

#endif  // MHMC_MODEL_HPP
