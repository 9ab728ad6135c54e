#ifndef MHMC_DIAGNOSTICS_HPP
#define MHMC_DIAGNOSTICS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "mhmc/sampler.hpp"

namespace mhmc {

namespace detail {

/// Standard-normal quantile (Acklam's rational approximation refined by one
/// Halley step on the complementary error function).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    return p <= 0.0 ? -std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::infinity();
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double pl = 0.02425;
  double x;
  if (p < pl) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
         c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - pl) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r +
         a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement.
  double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Split every chain into equal-length halves (an odd middle element is
/// dropped).  Throws TooShort below the minimum size for the estimators.
inline std::vector<Vec> split_chains(const std::vector<Vec>& chains) {
  if (chains.size() < 2)
    throw TooShort("need at least two chains (four half-chains)");
  Eigen::Index n = chains.front().size();
  for (const Vec& c : chains)
    if (c.size() != n) throw TooShort("chains must have equal length");
  if (n < 8) throw TooShort("chains must have at least eight draws");
  Eigen::Index half = n / 2;
  std::vector<Vec> out;
  out.reserve(2 * chains.size());
  for (const Vec& c : chains) {
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

/// Pooled average-rank normalisation: ranks over all draws (ties averaged)
/// mapped through the normal quantile with the (r − 3/8)/(N + 1/4) offset.
inline std::vector<Vec> rank_normalise(const std::vector<Vec>& chains) {
  const Eigen::Index n = chains.front().size();
  const Eigen::Index total = n * static_cast<Eigen::Index>(chains.size());
  std::vector<std::pair<double, Eigen::Index>> pooled;
  pooled.reserve(total);
  Eigen::Index flat = 0;
  for (const Vec& c : chains)
    for (Eigen::Index i = 0; i < n; ++i) pooled.emplace_back(c[i], flat++);
  std::sort(pooled.begin(), pooled.end());

  Vec rank(total);
  Eigen::Index i = 0;
  while (i < total) {
    Eigen::Index j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based ties
    for (Eigen::Index k = i; k <= j; ++k) rank[pooled[k].second] = avg;
    i = j + 1;
  }

  std::vector<Vec> out(chains.size(), Vec(n));
  flat = 0;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (Eigen::Index k = 0; k < n; ++k, ++flat)
      out[c][k] = normal_quantile((rank[flat] - 0.375) /
                                  (static_cast<double>(total) + 0.25));
  return out;
}

/// Classic potential-scale-reduction statistic on prepared (already split)
/// chains.  Zero within-chain variance yields +inf (degenerate flag).
inline double basic_rhat(const std::vector<Vec>& halves) {
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  Vec means(halves.size()), vars(halves.size());
  for (std::size_t c = 0; c < halves.size(); ++c) {
    means[c] = halves[c].mean();
    vars[c] = (halves[c].array() - means[c]).square().sum() / (n - 1.0);
  }
  double W = vars.mean();
  double grand = means.mean();
  double B = n * (means.array() - grand).square().sum() / (m - 1.0);
  if (W <= 0.0) return std::numeric_limits<double>::infinity();
  double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

inline double median_of(const std::vector<Vec>& chains) {
  std::vector<double> all;
  for (const Vec& c : chains)
    all.insert(all.end(), c.data(), c.data() + c.size());
  std::nth_element(all.begin(), all.begin() + all.size() / 2, all.end());
  double hi = all[all.size() / 2];
  if (all.size() % 2 == 1) return hi;
  double lo = *std::max_element(all.begin(), all.begin() + all.size() / 2);
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Rank-normalised split potential-scale-reduction statistic: the maximum
/// of the statistic over the rank-normalised draws and over the folded
/// (centred absolute) draws.
inline double split_rhat(const std::vector<Vec>& chains) {
  std::vector<Vec> halves = detail::split_chains(chains);
  double raw = detail::basic_rhat(detail::rank_normalise(halves));

  double med = detail::median_of(halves);
  std::vector<Vec> folded = halves;
  for (Vec& c : folded) c = (c.array() - med).abs().matrix();
  double fold = detail::basic_rhat(detail::rank_normalise(folded));
  return std::max(raw, fold);
}

/// Bulk effective sample size: rank-normalised split chains, per-chain
/// autocovariances combined into the pairwise autocorrelation sum with the
/// initial-monotone-sequence truncation.
inline double ess_bulk(const std::vector<Vec>& chains) {
  std::vector<Vec> halves =
      detail::rank_normalise(detail::split_chains(chains));
  const Eigen::Index n = halves.front().size();
  const std::size_t m = halves.size();

  // Per-chain autocovariances (1/n normalisation), direct sums.
  Mat acov(n, m);
  Vec means(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = halves[c].mean();
    Vec x = halves[c].array() - means[c];
    for (Eigen::Index t = 0; t < n; ++t) {
      double s = 0.0;
      for (Eigen::Index i = 0; i + t < n; ++i) s += x[i] * x[i + t];
      acov(t, c) = s / n;
    }
  }
  double mean_var = acov.row(0).mean() * n / (n - 1.0);
  double var_plus = mean_var * (n - 1.0) / n;
  if (m > 1) {
    double grand = means.mean();
    var_plus += (means.array() - grand).square().sum() / (m - 1.0);
  }
  if (var_plus <= 0.0) return std::numeric_limits<double>::quiet_NaN();

  Vec rho = Vec::Zero(n);
  rho[0] = 1.0;
  rho[1] = 1.0 - (mean_var - acov.row(1).mean()) / var_plus;
  double even = 1.0, odd = rho[1];
  Eigen::Index max_t = 1;
  for (Eigen::Index t = 1; t + 2 < n && even + odd > 0.0; t += 2) {
    even = 1.0 - (mean_var - acov.row(t + 1).mean()) / var_plus;
    odd = 1.0 - (mean_var - acov.row(t + 2).mean()) / var_plus;
    if (even + odd >= 0.0) {
      rho[t + 1] = even;
      rho[t + 2] = odd;
      max_t = t + 2;
    }
  }
  // Initial monotone sequence: successive pair sums must not increase.
  for (Eigen::Index t = 3; t <= max_t - 2; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  double tau = -1.0 + 2.0 * rho.head(max_t + 1).sum();
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n * m) + 10.0));
  return static_cast<double>(n) * static_cast<double>(m) / tau;
}

/// Monte-Carlo standard error of the posterior-mean estimate.
inline double mcse_mean(const std::vector<Vec>& chains) {
  double ess = ess_bulk(chains);
  std::vector<double> all;
  for (const Vec& c : chains)
    all.insert(all.end(), c.data(), c.data() + c.size());
  double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
  double ss = 0.0;
  for (double x : all) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / (all.size() - 1.0));
  return sd / std::sqrt(ess);
}

/// Measured per-operation unit times (seconds) feeding the operation-count
/// cost model.
struct UnitTimings {
  double constraint_eval = 0.0;
  double jacobian_build = 0.0;
  double gram_factorisation = 0.0;
  double grad_h1_eval = 0.0;
  double projection = 0.0;
  double newton_iter = 0.0;  ///< Newton-system solve per corrective update
};

/// Modelled compute time of a counter set under the unit timings.
inline double modelled_seconds(const OpCounters& ops,
                               const UnitTimings& u) {
  return ops.constraint_evals * u.constraint_eval +
         ops.jacobian_builds * u.jacobian_build +
         ops.gram_factorisations * u.gram_factorisation +
         ops.grad_h1_evals * u.grad_h1_eval +
         ops.projections * u.projection + ops.newton_iters * u.newton_iter;
}

/// Calibration loop: times each counted operation on a representative
/// target and on-manifold point, taking the mean over `reps` repetitions.
inline UnitTimings calibrate_unit_timings(const ManifoldTarget& target,
                                          const Vec& q, int reps = 20) {
  using clock = std::chrono::steady_clock;
  auto time_of = [reps](auto&& body) {
    auto t0 = clock::now();
    for (int r = 0; r < reps; ++r) body();
    return std::chrono::duration<double>(clock::now() - t0).count() / reps;
  };

  UnitTimings u;
  const auto& sys = target.system();
  u.constraint_eval = time_of([&] { (void)sys.constraint(q); });
  u.jacobian_build = time_of([&] { (void)sys.jacobian_blocks(q); });
  auto J = sys.jacobian_blocks(q);
  u.gram_factorisation = time_of([&] { (void)target.gram(J); });
  auto cache = target.cache(q);
  u.grad_h1_eval = time_of([&] { (void)target.grad_h1(cache); });
  Vec p = Vec::Ones(target.Q());
  u.projection = time_of([&] { (void)target.project(cache, p); });
  auto flow = make_flow(SplitKind::SV, target.metric(), 0.1);
  detail::NewtonMatrix newton{&target, &cache.J, flow.gqp};
  Vec e = sys.constraint(q);
  u.newton_iter = time_of([&] { (void)newton.solve(cache.J, e); });
  return u;
}

/// Per-parameter chain diagnostics plus the efficiency figures.
struct ParamDiagnostics {
  std::string name;
  double mean = 0.0;
  double ess = 0.0;
  double rhat = 0.0;
  double mcse = 0.0;
  double tau_eff = 0.0;       ///< modelled seconds per effective sample
  double tau_eff_wall = 0.0;  ///< wall-clock seconds per effective sample
};

struct EfficiencyReport {
  std::vector<ParamDiagnostics> params;
  double tau_step = 0.0;  ///< modelled seconds per constrained step
  double n_bar = 0.0;     ///< mean Newton iterations per h2 solve
  double modelled_seconds = 0.0;
  double wall_seconds = 0.0;
  OpCounters counters;
};

/// Post-warm-up draws of one monitored column across chains.
inline std::vector<Vec> param_chains(const std::vector<ChainTrace>& traces,
                                     int column) {
  std::vector<Vec> out;
  for (const ChainTrace& tr : traces) {
    const auto& src = tr.z.empty() || tr.z.front().size() == 0 ? tr.q : tr.z;
    Eigen::Index n = static_cast<Eigen::Index>(src.size()) - tr.warmup;
    Vec c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = src[tr.warmup + i][column];
    out.push_back(std::move(c));
  }
  return out;
}

/// Combine chain traces into the efficiency report.  Warm-up iterations
/// contribute to the compute-time totals but not to the ESS estimates.
inline EfficiencyReport efficiency_report(
    const std::vector<ChainTrace>& traces,
    const std::vector<std::string>& names, const UnitTimings& units) {
  EfficiencyReport rep;
  std::int64_t newton = 0, solves = 0;
  for (const ChainTrace& tr : traces) {
    rep.counters += tr.ops;
    rep.modelled_seconds += modelled_seconds(tr.ops, units);
    rep.wall_seconds += tr.wall_seconds;
    for (std::size_t i = 0; i < tr.n_newton.size(); ++i) {
      newton += tr.n_newton[i];
      solves += tr.h2_solves[i];
    }
  }
  rep.tau_step = rep.counters.integrator_steps > 0
                     ? rep.modelled_seconds / rep.counters.integrator_steps
                     : 0.0;
  rep.n_bar = solves > 0 ? static_cast<double>(newton) / solves : 0.0;

  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<Vec> chains = param_chains(traces, static_cast<int>(j));
    ParamDiagnostics d;
    d.name = names[j];
    double total = 0.0;
    std::int64_t count = 0;
    for (const Vec& c : chains) {
      total += c.sum();
      count += c.size();
    }
    d.mean = total / count;
    d.ess = ess_bulk(chains);
    d.rhat = split_rhat(chains);
    d.mcse = mcse_mean(chains);
    d.tau_eff = rep.modelled_seconds / d.ess;
    d.tau_eff_wall = rep.wall_seconds / d.ess;
    rep.params.push_back(std::move(d));
  }
  return rep;
}

}  // namespace mhmc

#endif  // MHMC_DIAGNOSTICS_HPP
