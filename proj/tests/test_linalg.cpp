// Unit tests for the dense and block-structured linear algebra layer.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mhmc/linalg.hpp"

using namespace mhmc;

namespace {

Mat random_spd(int n, std::mt19937_64& rng, double jitter = 0.5) {
  std::normal_distribution<double> nd;
  Mat R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = nd(rng);
  return R * R.transpose() + jitter * Mat::Identity(n, n);
}

Vec random_vec(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

}  // namespace

TEST_CASE("cholesky: identity and diagonal cases") {
  CHECK((cholesky(Mat::Identity(3, 3)).L - Mat::Identity(3, 3))
            .lpNorm<Eigen::Infinity>() == 0.0);
  Mat A(2, 2);
  A << 4, 0, 0, 9;
  Mat L = cholesky(A).L;
  CHECK(L(0, 0) == doctest::Approx(2.0));
  CHECK(L(1, 1) == doctest::Approx(3.0));
  CHECK(L(0, 1) == 0.0);
  CHECK(L(1, 0) == 0.0);
}

TEST_CASE("cholesky: random SPD residual") {
  std::mt19937_64 rng(1);
  Mat A = random_spd(6, rng);
  Mat L = cholesky(A).L;
  CHECK(((L * L.transpose()) - A).lpNorm<Eigen::Infinity>() /
            A.lpNorm<Eigen::Infinity>() <
        1e-12);
}

TEST_CASE("cholesky: indefinite matrix raises NotPositiveDefinite") {
  Mat A(2, 2);
  A << 1, 2, 2, 1;
  CHECK_THROWS_AS(cholesky(A), NotPositiveDefinite);
}

TEST_CASE("chol_solve: identity, diagonal and residual oracle") {
  Vec b(3);
  b << 1, -2, 5;
  CHECK((chol_solve({Mat::Identity(3, 3)}, b) - b).lpNorm<Eigen::Infinity>() ==
        0.0);

  Mat Ld(2, 2);
  Ld << 2, 0, 0, 3;
  Vec b2(2);
  b2 << 4, 9;
  Vec x2 = chol_solve({Ld}, b2);
  CHECK(x2[0] == doctest::Approx(1.0));
  CHECK(x2[1] == doctest::Approx(1.0));

  std::mt19937_64 rng(2);
  Mat A = random_spd(5, rng);
  Vec b5 = random_vec(5, rng);
  Vec x = chol_solve(cholesky(A), b5);
  CHECK((A * x - b5).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("logdet_from_cholesky: identity, diagonal, brute-force oracle") {
  CHECK(logdet_from_cholesky({Mat::Identity(4, 4)}) == 0.0);
  Mat Ld(2, 2);
  Ld << 2, 0, 0, 3;
  CHECK(logdet_from_cholesky({Ld}) == doctest::Approx(std::log(36.0)));

  std::mt19937_64 rng(3);
  Mat A = random_spd(4, rng);
  CHECK(logdet_from_cholesky(cholesky(A)) ==
        doctest::Approx(std::log(A.determinant())).epsilon(1e-10));
}

TEST_CASE("block_diag_apply_inverse: trivial and dense-oracle cases") {
  BlockDiagonalMatrix D1{{Mat::Identity(3, 3)}};
  std::mt19937_64 rng0(4);
  Vec r = random_vec(3, rng0);
  CHECK((block_diag_apply_inverse(D1, r) - r).lpNorm<Eigen::Infinity>() <
        1e-14);

  BlockDiagonalMatrix D2{{(Mat(1, 1) << 2).finished(),
                          (Mat(1, 1) << 4).finished()}};
  Vec r2(2);
  r2 << 2, 4;
  Vec x2 = block_diag_apply_inverse(D2, r2);
  CHECK(x2[0] == doctest::Approx(1.0));
  CHECK(x2[1] == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  BlockDiagonalMatrix D3{{random_spd(2, rng), random_spd(3, rng),
                          random_spd(4, rng)}};
  Vec r3 = random_vec(9, rng);
  Vec x3 = block_diag_apply_inverse(D3, r3);
  Vec xd = D3.dense().ldlt().solve(r3);
  CHECK((x3 - xd).lpNorm<Eigen::Infinity>() < 1e-10);

  // Round trip: D^{-1}(D x) = x.
  Vec x = random_vec(9, rng);
  CHECK((block_diag_apply_inverse(D3, D3.apply(x)) - x)
            .lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("woodbury_apply: zero correction and scalar case") {
  std::mt19937_64 rng(6);
  BlockDiagonalMatrix D{{random_spd(2, rng), random_spd(2, rng)}};
  Vec r = random_vec(4, rng);
  Mat U0(4, 0);
  Mat Mu0(0, 0);
  CHECK((woodbury_apply(D, U0, Mu0, r) - block_diag_apply_inverse(D, r))
            .lpNorm<Eigen::Infinity>() < 1e-12);

  // Scalar: D=[2], U=[1], Mu=[1] -> G = 1 + 2 = 3; r=3 -> x=1.
  BlockDiagonalMatrix Ds{{(Mat(1, 1) << 2).finished()}};
  Mat Us(1, 1), Mus(1, 1);
  Us << 1;
  Mus << 1;
  Vec rs(1);
  rs << 3;
  CHECK(woodbury_apply(Ds, Us, Mus, rs)[0] == doctest::Approx(1.0));
  CHECK(det_lemma_logdet(Ds, Us, Mus) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("woodbury/det-lemma agree with dense materialisation (200 random)") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> nblocks_d(0, 2);
  std::uniform_int_distribution<int> bs_d(1, 8);
  std::uniform_int_distribution<int> ucols_d(0, 3);
  const int kBChoices[3] = {1, 2, 4};
  for (int rep = 0; rep < 200; ++rep) {
    int B = kBChoices[nblocks_d(rng)];
    BlockDiagonalMatrix D;
    for (int b = 0; b < B; ++b) D.blocks.push_back(random_spd(bs_d(rng), rng));
    int n = static_cast<int>(D.rows());
    int u = ucols_d(rng);
    Mat U(n, u);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < u; ++j) U(i, j) = random_vec(1, rng)[0];
    Mat Mu = u > 0 ? random_spd(u, rng) : Mat(0, 0);
    Vec r = random_vec(n, rng);

    Mat G = D.dense();
    if (u > 0) G += U * Mu.inverse() * U.transpose();
    Vec x_ref = G.ldlt().solve(r);
    double ld_ref = std::log(G.determinant());

    Vec x = woodbury_apply(D, U, Mu, r);
    double ld = det_lemma_logdet(D, U, Mu);
    double xr = x_ref.lpNorm<Eigen::Infinity>();
    CHECK((x - x_ref).lpNorm<Eigen::Infinity>() / (1.0 + xr) < 1e-8);
    CHECK(ld == doctest::Approx(ld_ref).epsilon(1e-8));
  }
}

TEST_CASE("block LU solves non-symmetric block systems") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  BlockDiagonalMatrix E;
  for (int b = 0; b < 3; ++b) {
    Mat A(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) A(i, j) = nd(rng);
    A += 3.0 * Mat::Identity(3, 3);  // diag dominance for a well-posed test
    E.blocks.push_back(A);
  }
  Vec r = random_vec(9, rng);
  Vec x = block_lu(E).solve(r);
  CHECK((E.dense() * x - r).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("block LU flags singular blocks") {
  BlockDiagonalMatrix E{{Mat::Zero(2, 2)}};
  CHECK_THROWS_AS(block_lu(E), SingularBlock);
}
