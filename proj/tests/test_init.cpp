#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "mhmc/init.hpp"

using namespace mhmc;

namespace {

Vec simulate_obs(const ModelSpec& m, int T, std::uint64_t seed) {
  return simulate(m, T, seed).y;
}

}  // namespace

TEST_CASE("additive initialiser lands on the manifold (fhn, sigma 0.1)") {
  ModelSpec m = fhn_model(true, 0.1);
  const int T = 6;
  Vec y = simulate_obs(m, T, 21);
  std::mt19937_64 rng(1);
  Vec q = init_additive_noise(m, y, T, rng);
  REQUIRE(q.size() == m.latent_dim(T));
  ConstraintSystem probe(m, y, T, BlockPartition{});
  CHECK(inf_norm(probe.constraint(q)) < 1e-9);
  // Determinism under a fixed seed.
  std::mt19937_64 rng2(1);
  Vec q2 = init_additive_noise(m, y, T, rng2);
  CHECK((q - q2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("huge noise scale: prior draw passes the residual rule at once") {
  ModelSpec m = fhn_model(true, 1e6);
  const int T = 4;
  Vec y = Vec::Ones(T);
  std::mt19937_64 rng(3), rng_ref(3);
  Vec q = init_additive_noise(m, y, T, rng);
  // No descent happened: the (u, v0, v) prefix is the untouched prior draw.
  std::normal_distribution<double> nd;
  const int Qbar = m.U + m.V0 + m.S * T * m.V;
  for (int i = 0; i < Qbar; ++i) CHECK(q[i] == nd(rng_ref));
  ConstraintSystem probe(m, y, T, BlockPartition{});
  CHECK(inf_norm(probe.constraint(q)) < 1e-9);
}

TEST_CASE("state targets: linear fhn observation overrides the first "
          "coordinate only") {
  ModelSpec m = fhn_model(false);
  const int T = 3;
  Vec y(T);
  y << 0.4, -0.2, 1.1;
  Mat chi(2, T);
  chi << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  Vec z(4);
  z << 0.3, 0.1, 1.5, 0.8;
  Mat xt = target_states(m, z, y, T, chi);
  for (int t = 0; t < T; ++t) {
    CHECK(xt(0, t) == doctest::Approx(y[t]).epsilon(1e-12));
    CHECK(xt(1, t) == chi(1, t));  // unobserved coordinate untouched
  }
  // Already-consistent states pass through unchanged.
  Mat xt2 = target_states(m, z, y, T, xt);
  CHECK((xt2 - xt).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("state targets: identity observation returns the data") {
  ModelSpec m = ou_model();
  const int T = 2;
  Vec y(T);
  y << 0.7, -0.3;
  Mat chi = Mat::Zero(1, T);
  Mat xt = target_states(m, Vec(0), y, T, chi);
  CHECK(xt(0, 0) == doctest::Approx(0.7));
  CHECK(xt(0, 1) == doctest::Approx(-0.3));
}

TEST_CASE("state targets reject a rank-deficient observation Jacobian") {
  ModelSpec m = ou_model();
  m.h_obs = DifferentiableMap(1, 1, [](auto in, auto out) {
    out[0] = in[0] * in[0];  // Jacobian vanishes at x = 0
  });
  Vec y(1);
  y << -1.0;  // unattainable for x², iteration cannot converge
  Mat chi = Mat::Zero(1, 1);
  CHECK_THROWS_AS(target_states(m, Vec(0), y, 1, chi), ProjectionFailed);
}

TEST_CASE("noiseless initialiser: ou reaches the manifold") {
  ModelSpec m = ou_model();
  const int T = 5;
  Vec y = simulate_obs(m, T, 33);
  std::mt19937_64 rng(7);
  Vec q = init_noiseless(m, y, T, rng);
  ConstraintSystem probe(m, y, T, BlockPartition{});
  CHECK(inf_norm(probe.constraint(q)) < 1e-9);
  std::mt19937_64 rng2(7);
  Vec q2 = init_noiseless(m, y, T, rng2);
  CHECK((q - q2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noiseless initialiser: fhn reaches the manifold") {
  ModelSpec m = fhn_model(false);
  const int T = 4;
  Vec y = simulate_obs(m, T, 41);
  std::mt19937_64 rng(9);
  Vec q = init_noiseless(m, y, T, rng);
  ConstraintSystem probe(m, y, T, BlockPartition{});
  CHECK(inf_norm(probe.constraint(q)) < 1e-9);
}

TEST_CASE("one-step linear problem matches the hand solution") {
  // x' = x + v (S = 1, Delta = 1, unit diffusion), x0 = v0, y = x'.
  // The constraint c = v0 + v − y has the minimum-norm Newton projection
  // from q: q − Jᵀ(JJᵀ)⁻¹c with J = [1 1].
  ModelSpec m;
  m.name = "linear";
  m.X = 1;
  m.Bdim = 1;
  m.Z = 0;
  m.U = 0;
  m.V0 = 1;
  m.V = 1;
  m.W = 0;
  m.Y = 1;
  m.S = 1;
  m.Delta = 1.0;
  m.scheme = Scheme::EulerMaruyama;
  m.obs_kind = ObsKind::Noiseless;
  m.f_delta = DifferentiableMap(2, 1, [](auto in, auto out) {
    out[0] = in[0] + in[1];
  });
  m.g_z = DifferentiableMap(0, 0, [](auto, auto) {});
  m.g_x0 = DifferentiableMap(1, 1, [](auto in, auto out) { out[0] = in[0]; });
  m.h_obs = DifferentiableMap(1, 1, [](auto in, auto out) { out[0] = in[0]; });

  const int T = 1;
  Vec y(1);
  y << 2.0;
  std::mt19937_64 rng(11), rng_ref(11);
  Vec q = init_noiseless(m, y, T, rng);
  CHECK(q[0] + q[1] == doctest::Approx(2.0).epsilon(1e-12));
  // The objective gradient is symmetric in (v0, v), so descent and the
  // Newton projection both move along (1, 1): the hand solution shifts the
  // prior draw (a, b) by (2 − a − b)/2 in each coordinate.
  std::normal_distribution<double> nd;
  double a = nd(rng_ref), b = nd(rng_ref);
  double d = 0.5 * (2.0 - a - b);
  CHECK(q[0] == doctest::Approx(a + d).epsilon(1e-10));
  CHECK(q[1] == doctest::Approx(b + d).epsilon(1e-10));
}

TEST_CASE("regime dispatch and config validation") {
  InitConfig bad;
  bad.theta_gamma = 0.0;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(
      init_additive_noise(fhn_model(true), Vec::Ones(2), 2, rng, bad),
      ConfigError);
  CHECK_THROWS_AS(init_noiseless(fhn_model(true), Vec::Ones(2), 2, rng),
                  ConfigError);
}
