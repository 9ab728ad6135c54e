#ifndef MHMC_CONSTRAINT_HPP
#define MHMC_CONSTRAINT_HPP

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <vector>

#include "mhmc/diff.hpp"
#include "mhmc/linalg.hpp"
#include "mhmc/model.hpp"

namespace mhmc {

// ---------------------------------------------------------------------------
// Latent layout.  q = [u; v0; v_1..v_{ST}; w_1..w_T] flattened, with
// Q = U + V0 + S*T*V + T*W.
// ---------------------------------------------------------------------------
struct LatentLayout {
  int U = 0, V0 = 0, V = 0, W = 0;
  int S = 1, T = 1;

  int q_dim() const { return U + V0 + S * T * V + T * W; }
  int u_off() const { return 0; }
  int v0_off() const { return U; }
  int v_off() const { return U + V0; }           // start of v_1
  int w_off() const { return U + V0 + S * T * V; }  // start of w_1
};

// ---------------------------------------------------------------------------
// Conditioning scheme.  Interior observation-time boundaries t_1 < ... <
// t_{B-1} in (0, T); the implied B blocks cover observation times
// (t_{b-1}, t_b].  Conditioned state values at the boundaries are supplied
// separately (they are read from the current chain path each transition).
// ---------------------------------------------------------------------------
struct BlockPartition {
  std::vector<int> bounds;  ///< interior boundaries, strictly increasing

  int n_blocks() const { return static_cast<int>(bounds.size()) + 1; }
};

/// Equispaced partition t_b = b*R.  R >= T yields the degenerate single
/// block (no artificial conditioning).
inline BlockPartition even_partition(int T, int R) {
  BlockPartition p;
  if (R < T)
    for (int t = R; t < T; t += R) p.bounds.push_back(t);
  return p;
}

/// Shifted partition t_b = floor((2b-1)R/2), alternated with the even one
/// so the composed kernel can move the conditioned states themselves.
inline BlockPartition shifted_partition(int T, int R) {
  BlockPartition p;
  if (R < T)
    for (int b = 1;; ++b) {
      int t = ((2 * b - 1) * R) / 2;
      if (t <= 0) continue;
      if (t >= T) break;
      p.bounds.push_back(t);
    }
  return p;
}

/// States and observations generated forward from a latent vector.
struct GeneratedPath {
  Mat x;  ///< X x (S*T + 1), column 0 is the initial state
  Vec y;  ///< stacked observations, length T*Y
};

/// Iterate the forward operator from g_x0(g_z(u), v0), emitting the
/// observation function at every S-th step.
inline GeneratedPath generate(const ModelSpec& m, int T, const Vec& q) {
  LatentLayout lay{m.U, m.V0, m.V, m.W, m.S, T};
  GeneratedPath out;
  out.x.resize(m.X, m.S * T + 1);
  out.y.resize(T * m.Y);

  Vec z = m.Z > 0 ? eval(m.g_z, q.head(m.U)) : Vec(0);
  Vec gin(m.Z + m.V0);
  gin.head(m.Z) = z;
  gin.tail(m.V0) = q.segment(lay.v0_off(), m.V0);
  Vec x = eval(m.g_x0, gin);
  out.x.col(0) = x;

  Vec fin(m.Z + m.X + m.V);
  fin.head(m.Z) = z;
  Vec hin(m.Z + m.X + m.W);
  hin.head(m.Z) = z;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < m.S; ++s) {
      int step = t * m.S + s;
      fin.segment(m.Z, m.X) = x;
      fin.tail(m.V) = q.segment(lay.v_off() + step * m.V, m.V);
      x = eval(m.f_delta, fin);
      out.x.col(step + 1) = x;
    }
    hin.segment(m.Z, m.X) = x;
    if (m.W > 0) hin.tail(m.W) = q.segment(lay.w_off() + t * m.W, m.W);
    out.y.segment(t * m.Y, m.Y) = eval(m.h_obs, hin);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint system: per-block partial constraint maps c_b and their
// Jacobian structure.  Block b depends only on (u, v-slice, w-slice); its
// outputs are the observation residuals of the block followed, for
// non-final blocks, by the terminal-state residual x_{S t_b} - xbar_b.
// In the noiseless regime the boundary observation y_{t_b} of a non-final
// block is implied by the conditioned state and is dropped from the
// outputs.
// ---------------------------------------------------------------------------
class ConstraintSystem {
 public:
  struct Block {
    DifferentiableMap map;  ///< [u; v-slice; w-slice] -> residuals
    int t_lo = 0, t_hi = 0;  ///< observation times (t_lo, t_hi]
    int v_begin = 0, v_len = 0;  ///< global q indices of the v inputs
    int w_begin = 0, w_len = 0;  ///< global q indices of the w inputs
    int out_dim = 0;
    int row_off = 0;  ///< first row in the stacked constraint vector
    bool final_block = false;
  };

  ConstraintSystem(const ModelSpec& m, Vec y_obs, int T,
                   const BlockPartition& part, Mat xbar = Mat())
      : model_(std::make_shared<ModelSpec>(m)),
        y_obs_(std::move(y_obs)),
        layout_{m.U, m.V0, m.V, m.W, m.S, T},
        xbar_(std::move(xbar)) {
    const int B = part.n_blocks();
    if (xbar_.cols() == 0) xbar_.resize(m.X, 0);
    if (xbar_.cols() != B - 1)
      throw ConfigError("conditioned-state count does not match partition");
    blocks_.reserve(B);
    int row = 0;
    for (int b = 0; b < B; ++b) {
      int t_lo = b == 0 ? 0 : part.bounds[b - 1];
      int t_hi = b == B - 1 ? T : part.bounds[b];
      blocks_.push_back(make_block(b, t_lo, t_hi, row));
      row += blocks_.back().out_dim;
    }
    C_ = row;
  }

  /// A system with a single custom constraint block over the whole latent
  /// vector (no parameter/observation split).  Used for analytically
  /// tractable integrator tests such as sphere constraints.
  static ConstraintSystem from_map(DifferentiableMap map) {
    ConstraintSystem sys;
    sys.layout_ = LatentLayout{0, 0, map.in_dim(), 0, 1, 1};
    sys.C_ = map.out_dim();
    Block blk;
    blk.map = std::move(map);
    blk.t_lo = 0;
    blk.t_hi = 1;
    blk.v_begin = 0;
    blk.v_len = sys.layout_.q_dim();
    blk.w_begin = blk.v_len;
    blk.w_len = 0;
    blk.out_dim = sys.C_;
    blk.row_off = 0;
    blk.final_block = true;
    sys.blocks_.push_back(std::move(blk));
    return sys;
  }

  const ModelSpec& model() const { return *model_; }
  const LatentLayout& layout() const { return layout_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  int T() const { return layout_.T; }
  int Q() const { return layout_.q_dim(); }
  int C() const { return C_; }
  const Vec& observations() const { return y_obs_; }

  /// Block input vector [u; v-slice; w-slice] gathered from q.
  Vec gather(const Vec& q, const Block& blk) const {
    Vec in(layout_.U + blk.v_len + blk.w_len);
    in.head(layout_.U) = q.head(layout_.U);
    in.segment(layout_.U, blk.v_len) = q.segment(blk.v_begin, blk.v_len);
    if (blk.w_len > 0)
      in.tail(blk.w_len) = q.segment(blk.w_begin, blk.w_len);
    return in;
  }

  /// Stacked constraint value c(q) (all blocks concatenated).
  Vec constraint(const Vec& q) const {
    Vec c(C_);
    for (const auto& blk : blocks_)
      c.segment(blk.row_off, blk.out_dim) = eval(blk.map, gather(q, blk));
    return c;
  }

  /// Per-block constraint values.
  std::vector<Vec> partial_constraints(const Vec& q) const {
    std::vector<Vec> out;
    out.reserve(blocks_.size());
    for (const auto& blk : blocks_)
      out.push_back(eval(blk.map, gather(q, blk)));
    return out;
  }

  /// Constraint Jacobian in blocked form: dense parameter column block U
  /// (C x U) plus block-diagonal V (C x (V0 + STV)) and W (C x TW) factors.
  struct JacobianBlocks {
    Mat U;                   ///< C x U
    BlockDiagonalMatrix V;   ///< per-block V-slice Jacobians
    BlockDiagonalMatrix W;   ///< per-block W-slice Jacobians
    const ConstraintSystem* sys = nullptr;

    /// dc(q) * nu for a Q-dimensional vector nu.
    Vec apply(const Vec& nu) const {
      const auto& lay = sys->layout();
      Vec r = U * nu.head(lay.U);
      int row = 0;
      for (std::size_t b = 0; b < sys->blocks().size(); ++b) {
        const auto& blk = sys->blocks()[b];
        r.segment(row, blk.out_dim).noalias() +=
            V.blocks[b] * nu.segment(blk.v_begin, blk.v_len);
        if (blk.w_len > 0)
          r.segment(row, blk.out_dim).noalias() +=
              W.blocks[b] * nu.segment(blk.w_begin, blk.w_len);
        row += blk.out_dim;
      }
      return r;
    }

    /// dc(q)^T * lambda for a C-dimensional vector lambda.
    Vec apply_transpose(const Vec& lam) const {
      const auto& lay = sys->layout();
      Vec r = Vec::Zero(lay.q_dim());
      r.head(lay.U) = U.transpose() * lam;
      int row = 0;
      for (std::size_t b = 0; b < sys->blocks().size(); ++b) {
        const auto& blk = sys->blocks()[b];
        r.segment(blk.v_begin, blk.v_len).noalias() +=
            V.blocks[b].transpose() * lam.segment(row, blk.out_dim);
        if (blk.w_len > 0)
          r.segment(blk.w_begin, blk.w_len).noalias() +=
              W.blocks[b].transpose() * lam.segment(row, blk.out_dim);
        row += blk.out_dim;
      }
      return r;
    }

    /// Dense materialisation (oracle and dense-mode path).
    Mat dense() const {
      const auto& lay = sys->layout();
      Mat J = Mat::Zero(sys->C(), lay.q_dim());
      J.leftCols(lay.U) = U;
      int row = 0;
      for (std::size_t b = 0; b < sys->blocks().size(); ++b) {
        const auto& blk = sys->blocks()[b];
        J.block(row, blk.v_begin, blk.out_dim, blk.v_len) = V.blocks[b];
        if (blk.w_len > 0)
          J.block(row, blk.w_begin, blk.out_dim, blk.w_len) = W.blocks[b];
        row += blk.out_dim;
      }
      return J;
    }
  };

  JacobianBlocks jacobian_blocks(const Vec& q) const {
    JacobianBlocks jb;
    jb.sys = this;
    jb.U.resize(C_, layout_.U);
    jb.V.blocks.reserve(blocks_.size());
    jb.W.blocks.reserve(blocks_.size());
    for (const auto& blk : blocks_) {
      Mat J = jacobian(blk.map, gather(q, blk));
      jb.U.middleRows(blk.row_off, blk.out_dim) = J.leftCols(layout_.U);
      jb.V.blocks.push_back(J.middleCols(layout_.U, blk.v_len));
      jb.W.blocks.push_back(J.rightCols(blk.w_len));
    }
    return jb;
  }

 private:
  ConstraintSystem() = default;

  Block make_block(int b, int t_lo, int t_hi, int row_off) const {
    const ModelSpec& m = *model_;
    const LatentLayout& lay = layout_;
    const int B = static_cast<int>(xbar_.cols()) + 1;
    const bool final_block = (b == B - 1);
    const bool noiseless = m.obs_kind == ObsKind::Noiseless;
    const int n_obs = t_hi - t_lo;
    // Noiseless non-final blocks drop the boundary observation (implied by
    // the conditioned terminal state).
    const int n_y_rows = final_block ? n_obs : (noiseless ? n_obs - 1 : n_obs);
    const int out_dim = n_y_rows * m.Y + (final_block ? 0 : m.X);

    Block blk;
    blk.t_lo = t_lo;
    blk.t_hi = t_hi;
    blk.final_block = final_block;
    blk.row_off = row_off;
    blk.out_dim = out_dim;
    if (b == 0) {
      blk.v_begin = lay.v0_off();
      blk.v_len = m.V0 + m.S * t_hi * m.V;
    } else {
      blk.v_begin = lay.v_off() + m.S * t_lo * m.V;
      blk.v_len = m.S * (t_hi - t_lo) * m.V;
    }
    blk.w_begin = lay.w_off() + t_lo * m.W;
    blk.w_len = n_obs * m.W;

    // Captured constants for the block map.
    const ModelSpec mdl = m;  // value copy: blocks are self-contained
    const Vec x_init = b == 0 ? Vec() : Vec(xbar_.col(b - 1));
    const Vec x_term = final_block ? Vec() : Vec(xbar_.col(b));
    const Vec y_blk = y_obs_.segment(t_lo * m.Y, n_obs * m.Y);
    const int in_dim = m.U + blk.v_len + blk.w_len;

    blk.map = DifferentiableMap(in_dim, out_dim, [=](auto in, auto outp) {
      using S = std::remove_cvref_t<decltype(in[0])>;
      const int U = mdl.U, Z = mdl.Z, X = mdl.X, V = mdl.V, W = mdl.W,
                Y = mdl.Y, NS = mdl.S;
      // z = g_z(u)
      std::vector<S> z(Z);
      if (Z > 0) mdl.g_z(in.subspan(0, U), std::span<S>(z));
      // Initial state of the block.
      std::vector<S> x(X);
      int v_cursor = U;
      if (x_init.size() == 0) {
        std::vector<S> gin(Z + mdl.V0);
        for (int i = 0; i < Z; ++i) gin[i] = z[i];
        for (int i = 0; i < mdl.V0; ++i) gin[Z + i] = in[U + i];
        v_cursor += mdl.V0;
        mdl.g_x0(std::span<const S>(gin), std::span<S>(x));
      } else {
        for (int i = 0; i < X; ++i) x[i] = S(x_init[i]);
      }
      // Iterate the forward operator, emitting residual rows.
      std::vector<S> fin(Z + X + V), xn(X), hin(Z + X + W), yv(Y);
      for (int i = 0; i < Z; ++i) {
        fin[i] = z[i];
        hin[i] = z[i];
      }
      int row = 0;
      const int w_cursor = static_cast<int>(in.size()) - n_obs * W;
      for (int k = 0; k < n_obs; ++k) {
        for (int s = 0; s < NS; ++s) {
          for (int i = 0; i < X; ++i) fin[Z + i] = x[i];
          for (int i = 0; i < V; ++i) fin[Z + X + i] = in[v_cursor++];
          mdl.f_delta(std::span<const S>(fin), std::span<S>(xn));
          x.swap(xn);
        }
        const bool emit_y = final_block || !(mdl.obs_kind == ObsKind::Noiseless
                                             && k == n_obs - 1);
        if (emit_y) {
          for (int i = 0; i < X; ++i) hin[Z + i] = x[i];
          for (int i = 0; i < W; ++i) hin[Z + X + i] = in[w_cursor + k * W + i];
          mdl.h_obs(std::span<const S>(hin), std::span<S>(yv));
          for (int i = 0; i < Y; ++i) outp[row++] = yv[i] - y_blk[k * Y + i];
        }
      }
      if (x_term.size() > 0)
        for (int i = 0; i < X; ++i) outp[row++] = x[i] - x_term[i];
    });
    return blk;
  }

  std::shared_ptr<ModelSpec> model_;
  Vec y_obs_;
  LatentLayout layout_;
  Mat xbar_;  ///< conditioned boundary states, X x (B-1)
  std::vector<Block> blocks_;
  int C_ = 0;
};

}  // namespace mhmc

#endif  // MHMC_CONSTRAINT_HPP
