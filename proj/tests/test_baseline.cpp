#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mhmc/baseline.hpp"

using namespace mhmc;

namespace {

/// Observation means for a reduced latent vector (noise variables at zero).
Vec obs_means(const ModelSpec& m, int T, const Vec& qbar) {
  Vec q = Vec::Zero(m.latent_dim(T));
  q.head(qbar.size()) = qbar;
  GeneratedPath path = generate(m, T, q);
  return path.y;
}

Vec random_qbar(const ModelSpec& m, int T, std::uint64_t seed,
                double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vec q(m.U + m.V0 + m.S * T * m.V);
  for (int i = 0; i < q.size(); ++i) q[i] = scale * nd(rng);
  return q;
}

}  // namespace

TEST_CASE("log posterior at exact observations reduces to the noise "
          "normaliser") {
  ModelSpec m = fhn_model(true, 0.1);
  const int T = 3;
  Vec qbar = random_qbar(m, T, 5);
  Vec y = obs_means(m, T, qbar);  // residuals vanish identically
  BaselineTarget target(m, y, T);
  double expected = -0.5 * qbar.squaredNorm() -
                    T * m.Y * std::log(m.sigma_y) -
                    0.5 * (target.Q() + T * m.Y) *
                        std::log(2.0 * std::numbers::pi);
  CHECK(target.log_density(qbar) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("large noise scale removes the data influence on the path") {
  const int T = 3;
  ModelSpec wide = fhn_model(true, 1e8);
  Vec qbar = random_qbar(wide, T, 7);
  Vec y = Vec::Ones(T);
  Vec grad;
  BaselineTarget target(wide, y, T);
  target.log_density(qbar, grad);
  // Data term gradient is O(σ_y⁻²); only the prior −q̄ survives.
  CHECK((grad + qbar).cwiseAbs().maxCoeff() < 1e-18 * 1e4);
  // And the data term itself is −TY log σ_y + o(1) relative to a shifted
  // path: two different latent vectors give the same data contribution.
  Vec qbar2 = random_qbar(wide, T, 8);
  double d1 = target.log_density(qbar) + 0.5 * qbar.squaredNorm();
  double d2 = target.log_density(qbar2) + 0.5 * qbar2.squaredNorm();
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-10));
}

TEST_CASE("gradient matches finite differences") {
  ModelSpec m = fhn_model(true, 0.1);
  const int T = 2;
  Vec qbar = random_qbar(m, T, 9);
  Vec y = obs_means(m, T, qbar) + 0.05 * Vec::Ones(T);
  BaselineTarget target(m, y, T);

  Vec grad;
  target.log_density(qbar, grad);
  const double eps = 1e-6;
  for (int i = 0; i < target.Q(); i += 3) {
    Vec qp = qbar, qm = qbar;
    qp[i] += eps;
    qm[i] -= eps;
    double fd =
        (target.log_density(qp) - target.log_density(qm)) / (2.0 * eps);
    CHECK(grad[i] ==
          doctest::Approx(fd).epsilon(1e-5).scale(std::abs(fd) + 1.0));
  }
}

TEST_CASE("sir noise scale is parameter-dependent and handled on the tape") {
  ModelSpec m = sir_model();
  const int T = 2;
  // Epidemic-growth parameters keep the log-state path bounded over the
  // test horizon (the unconditioned dynamics blow up otherwise).
  Vec qbar = random_qbar(m, T, 11, 0.05);
  qbar.head(5) << std::log(0.5), 0.0, 1.5, 0.0, 0.0;
  Vec y = 5.0 * Vec::Ones(T * m.Y);
  BaselineTarget target(m, y, T);
  Vec grad;
  double v = target.log_density(qbar, grad);
  CHECK(std::isfinite(v));
  const double eps = 1e-6;
  for (int i : {0, 3, 4, 6}) {
    Vec qp = qbar, qm = qbar;
    qp[i] += eps;
    qm[i] -= eps;
    double fd =
        (target.log_density(qp) - target.log_density(qm)) / (2.0 * eps);
    CHECK(grad[i] ==
          doctest::Approx(fd).epsilon(1e-5).scale(std::abs(fd) + 1.0));
  }
}

TEST_CASE("degenerate regimes are rejected") {
  CHECK_THROWS_AS(BaselineTarget(fhn_model(true, 0.0), Vec::Ones(2), 2),
                  SingularNoiseScale);
  CHECK_THROWS_AS(BaselineTarget(ou_model(), Vec::Ones(2), 2), ConfigError);
}

TEST_CASE("metric window schedule follows the doubling recipe") {
  auto ends = detail::metric_windows(1000);
  REQUIRE(ends.size() == 5);
  CHECK(ends[0] == 100);
  CHECK(ends[1] == 150);
  CHECK(ends[2] == 250);
  CHECK(ends[3] == 450);
  CHECK(ends[4] == 950);
  // Short warm-up degenerates gracefully.
  auto small = detail::metric_windows(40);
  for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i] < 40);
}

TEST_CASE("baseline chain recovers a near-prior target") {
  // With a huge noise scale the posterior collapses to the standard-normal
  // prior on q̄, giving an exactly known target for the whole sampler.
  const int T = 2;
  ModelSpec wide = fhn_model(true, 1e8);
  Vec y = Vec::Zero(T);
  BaselineConfig cfg;
  cfg.iterations = 2500;
  cfg.warmup = 500;
  cfg.seed = 13;
  BaselineTarget probe(wide, y, T);
  ChainTrace tr = run_baseline_chain(wide, y, T, cfg, Vec::Zero(probe.Q()));

  ChainTrace tr2 = run_baseline_chain(wide, y, T, cfg, Vec::Zero(probe.Q()));
  for (std::size_t i = 0; i < tr.q.size(); ++i)
    CHECK((tr.q[i] - tr2.q[i]).cwiseAbs().maxCoeff() == 0.0);

  const int N = cfg.iterations - cfg.warmup;
  for (int j : {0, 2, 5}) {
    double sum = 0.0, sumsq = 0.0;
    for (int it = cfg.warmup; it < cfg.iterations; ++it) {
      sum += tr.q[it][j];
      sumsq += tr.q[it][j] * tr.q[it][j];
    }
    double mean = sum / N;
    double var = sumsq / N - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(N / 8.0));
    CHECK(var == doctest::Approx(1.0).epsilon(0.2));
  }
  double acc = 0.0;
  for (int it = cfg.warmup; it < cfg.iterations; ++it)
    acc += tr.accept_stat[it];
  CHECK(acc / N > 0.6);
}
