#ifndef MHMC_LINALG_HPP
#define MHMC_LINALG_HPP

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mhmc/errors.hpp"

namespace mhmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// ∞-norm that is zero on empty vectors (degenerate constraint systems).
inline double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/// Lower-triangular Cholesky factor L with L·Lᵀ equal to the factored
/// matrix.
struct CholeskyFactor {
  Mat L;
};

/// Unpivoted Cholesky factorisation.  A pivot ≤ 0 (or a non-finite entry)
/// raises NotPositiveDefinite; no jitter or pivoting is attempted, since in
/// the sampler a failure signals a rank-deficient Gram matrix and must
/// surface as a rejection rather than a silently regularised target.
inline CholeskyFactor cholesky(const Mat& A) {
  const auto n = A.rows();
  Mat L = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = A(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d))
      throw NotPositiveDefinite("cholesky pivot " + std::to_string(j));
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = A(i, j) - L.row(i).head(j).dot(L.row(j).head(j));
      L(i, j) = s / L(j, j);
    }
  }
  return {std::move(L)};
}

/// Solve (L·Lᵀ)x = b by two triangular solves.
inline Vec chol_solve(const CholeskyFactor& F, const Vec& b) {
  Vec y = F.L.triangularView<Eigen::Lower>().solve(b);
  return F.L.transpose().triangularView<Eigen::Upper>().solve(y);
}

/// log det of the factored matrix: 2·Σ log L_ii.
inline double logdet_from_cholesky(const CholeskyFactor& F) {
  return 2.0 * F.L.diagonal().array().log().sum();
}

/// Block-diagonal matrix: an ordered sequence of dense blocks.  Blocks may
/// be rectangular when the matrix is used as a structured rectangular
/// operator (the V and W constraint-Jacobian factors); inverse applications
/// require square blocks.
struct BlockDiagonalMatrix {
  std::vector<Mat> blocks;

  Eigen::Index rows() const {
    Eigen::Index r = 0;
    for (const auto& b : blocks) r += b.rows();
    return r;
  }
  Eigen::Index cols() const {
    Eigen::Index c = 0;
    for (const auto& b : blocks) c += b.cols();
    return c;
  }

  /// Dense materialisation (test oracle and small-instance fallback).
  Mat dense() const {
    Mat A = Mat::Zero(rows(), cols());
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) {
      A.block(r, c, b.rows(), b.cols()) = b;
      r += b.rows();
      c += b.cols();
    }
    return A;
  }

  Vec apply(const Vec& x) const {
    Vec y(rows());
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) {
      y.segment(r, b.rows()).noalias() = b * x.segment(c, b.cols());
      r += b.rows();
      c += b.cols();
    }
    return y;
  }

  Vec apply_transpose(const Vec& x) const {
    Vec y(cols());
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) {
      y.segment(c, b.cols()).noalias() = b.transpose() * x.segment(r, b.rows());
      r += b.rows();
      c += b.cols();
    }
    return y;
  }
};

/// Cholesky factors of a symmetric positive-definite block-diagonal matrix.
struct BlockCholesky {
  std::vector<CholeskyFactor> factors;
  double logdet = 0.0;

  Vec solve(const Vec& r) const {
    Vec x(r.size());
    Eigen::Index off = 0;
    for (const auto& f : factors) {
      x.segment(off, f.L.rows()) = chol_solve(f, r.segment(off, f.L.rows()));
      off += f.L.rows();
    }
    return x;
  }

  Mat solve(const Mat& R) const {
    Mat X(R.rows(), R.cols());
    for (Eigen::Index j = 0; j < R.cols(); ++j) X.col(j) = solve(Vec(R.col(j)));
    return X;
  }
};

inline BlockCholesky block_cholesky(const BlockDiagonalMatrix& D) {
  BlockCholesky out;
  out.factors.reserve(D.blocks.size());
  for (const auto& b : D.blocks) {
    out.factors.push_back(cholesky(b));
    out.logdet += logdet_from_cholesky(out.factors.back());
  }
  return out;
}

/// LU factors (partial pivoting) of a generally non-symmetric block-diagonal
/// matrix, as needed for the Newton matrix blocks.
struct BlockLU {
  std::vector<Eigen::PartialPivLU<Mat>> factors;
  std::vector<Eigen::Index> sizes;

  Vec solve(const Vec& r) const {
    Vec x(r.size());
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < factors.size(); ++k) {
      x.segment(off, sizes[k]) = factors[k].solve(r.segment(off, sizes[k]));
      off += sizes[k];
    }
    return x;
  }

  Mat solve(const Mat& R) const {
    Mat X(R.rows(), R.cols());
    for (Eigen::Index j = 0; j < R.cols(); ++j) X.col(j) = solve(Vec(R.col(j)));
    return X;
  }
};

inline BlockLU block_lu(const BlockDiagonalMatrix& E) {
  BlockLU out;
  out.factors.reserve(E.blocks.size());
  for (const auto& b : E.blocks) {
    out.factors.emplace_back(b);
    out.sizes.push_back(b.rows());
    // PartialPivLU does not report singularity; check the U diagonal.
    double dmin = out.factors.back().matrixLU().diagonal().cwiseAbs().minCoeff();
    double dmax = out.factors.back().matrixLU().diagonal().cwiseAbs().maxCoeff();
    if (!(dmin > 0.0) || !std::isfinite(dmax) || dmin < 1e-14 * dmax)
      throw SingularBlock("block LU");
  }
  return out;
}

/// D⁻¹r computed block-by-block (Cholesky per symmetric block).
inline Vec block_diag_apply_inverse(const BlockDiagonalMatrix& D,
                                    const Vec& r) {
  return block_cholesky(D).solve(r);
}

/// Woodbury solve for the conditioned Gram matrix:
///   (U M_u⁻¹ Uᵀ + D)⁻¹ r = D⁻¹(r − U C⁻¹ Uᵀ D⁻¹ r),
/// with capacitance C = M_u + Uᵀ D⁻¹ U.  Factors are built once for
/// repeated applications.
struct WoodburyOperator {
  BlockCholesky Dfac;
  Mat U;
  Mat DinvU;               // D⁻¹U
  CholeskyFactor Cfac;     // capacitance C = M_u + UᵀD⁻¹U
  double logdet_Mu = 0.0;  // for the determinant lemma

  Vec apply_inverse(const Vec& r) const {
    if (U.cols() == 0) return Dfac.solve(r);
    Vec Dinv_r = Dfac.solve(r);
    Vec phi = chol_solve(Cfac, U.transpose() * Dinv_r);
    return Dinv_r - DinvU * phi;
  }

  /// Matrix determinant lemma: log det(U M_u⁻¹ Uᵀ + D)
  ///   = log det C + log det D − log det M_u.
  double logdet() const { return logdet_C() + Dfac.logdet - logdet_Mu; }

  double logdet_C() const {
    return U.cols() == 0 ? 0.0 : logdet_from_cholesky(Cfac);
  }
};

inline WoodburyOperator make_woodbury(const BlockDiagonalMatrix& D,
                                      const Mat& U, const Mat& Mu) {
  WoodburyOperator op;
  op.Dfac = block_cholesky(D);
  op.U = U;
  if (U.cols() > 0) {
    op.DinvU = op.Dfac.solve(U);
    Mat C = Mu + U.transpose() * op.DinvU;
    try {
      op.Cfac = cholesky(0.5 * (C + C.transpose()));
    } catch (const NotPositiveDefinite&) {
      throw SingularCapacitance("woodbury capacitance");
    }
    op.logdet_Mu = logdet_from_cholesky(cholesky(Mu));
  }
  return op;
}

/// One-shot forms matching the operation contracts.
inline Vec woodbury_apply(const BlockDiagonalMatrix& D, const Mat& U,
                          const Mat& Mu, const Vec& r) {
  return make_woodbury(D, U, Mu).apply_inverse(r);
}

inline double det_lemma_logdet(const BlockDiagonalMatrix& D, const Mat& U,
                               const Mat& Mu) {
  return make_woodbury(D, U, Mu).logdet();
}

}  // namespace mhmc

#endif  // MHMC_LINALG_HPP
