#ifndef MHMC_SAMPLER_HPP
#define MHMC_SAMPLER_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mhmc/integrator.hpp"
#include "mhmc/models.hpp"

namespace mhmc {

/// Chain driver configuration.  `iterations` is the total length including
/// the warm-up prefix.
struct SamplerConfig {
  int iterations = 2000;
  int warmup = 1000;
  double target_accept = 0.8;
  int max_depth = 10;       ///< dynamic mode
  int static_steps = 10;    ///< static mode integration length I
  bool dynamic = true;
  int R = 5;                ///< conditioning block size (R >= T: single block)
  SplitKind split = SplitKind::SV;
  GramMode mode = GramMode::Blocked;
  IntegratorConfig integrator;  ///< step_size is the initial / fixed t
  bool adapt = true;
  std::uint64_t seed = 1;

  void validate(int T) const {
    if (iterations <= 0 || warmup < 0 || warmup >= iterations)
      throw ConfigError("warm-up must be shorter than the iteration count");
    if (max_depth < 1 || max_depth > 14)
      throw ConfigError("max tree depth out of range");
    if (R < 1 || T < 1) throw ConfigError("R and T must be positive");
    if (!(integrator.step_size > 0.0))
      throw ConfigError("step size must be positive");
  }
};

/// Outcome of one Markov transition.
struct TransitionResult {
  ConstrainedState state;
  double accept_stat = 0.0;  ///< mean of min(1, exp(h0 − h)) over proposals
  double hamiltonian = 0.0;  ///< at the returned state
  int depth_or_steps = 0;
  int newton_iters = 0;      ///< Newton iterations spent in this transition
  int h2_solves = 0;
  bool divergent = false;
  std::string error_tag;     ///< last IntegratorError reason, if any
};

namespace detail {

inline double log_add_exp(double a, double b) {
  double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

/// Static-integration-time transition: resample momentum, take I
/// constrained steps, Metropolis-accept with probability
/// min(1, exp(h − h′)).  Rejection and IntegratorError both return
/// (q, −p).
inline TransitionResult static_transition(const ManifoldTarget& target,
                                          const ConstrainedState& start,
                                          int I, const IntegratorConfig& cfg,
                                          std::mt19937_64& rng,
                                          OpCounters* ops = nullptr) {
  OpCounters local;
  ConstrainedState s = start;
  {
    std::normal_distribution<double> nd;
    Vec p(target.Q());
    for (int i = 0; i < target.Q(); ++i)
      p[i] = std::sqrt(target.metric().diag[i]) * nd(rng);
    s.p = target.project(s.cache, p);
    local.projections += 1;
  }
  const double h0 = target.hamiltonian(s.cache, s.p);

  TransitionResult out;
  out.depth_or_steps = I;
  ConstrainedState prop = s;
  bool failed = false;
  try {
    for (int i = 0; i < I; ++i)
      prop = constrained_step(target, prop, cfg, &local);
  } catch (const IntegratorError& err) {
    failed = true;
    out.error_tag = to_string(err.reason);
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (!failed) {
    double h1 = target.hamiltonian(prop.cache, prop.p);
    out.accept_stat = std::min(1.0, std::exp(h0 - h1));
    if (unif(rng) < out.accept_stat) {
      out.state = std::move(prop);
      out.hamiltonian = h1;
    } else {
      out.state = s;
      out.state.p = -s.p;
      out.hamiltonian = h0;
    }
  } else {
    out.accept_stat = 0.0;
    out.state = s;
    out.state.p = -s.p;
    out.hamiltonian = h0;
  }
  out.newton_iters = static_cast<int>(local.newton_iters);
  out.h2_solves = static_cast<int>(local.h2_solves);
  if (ops != nullptr) *ops += local;
  return out;
}

namespace detail {

struct NutsTree {
  ConstrainedState z_minus, z_plus;  // trajectory ends (p oriented forward)
  ConstrainedState z_prop;
  double log_sum_w = -std::numeric_limits<double>::infinity();
  double sum_accept = 0.0;
  std::int64_t n_steps = 0;
  bool ok = false;             // false: U-turn/divergence inside
  bool divergent = false;
  std::string error_tag;
};

inline bool u_turn(const ManifoldTarget& target, const ConstrainedState& minus,
                   const ConstrainedState& plus) {
  Vec dq = plus.q() - minus.q();
  return dq.dot(target.metric_inv().cwiseProduct(minus.p)) < 0.0 ||
         dq.dot(target.metric_inv().cwiseProduct(plus.p)) < 0.0;
}

/// Recursive doubling with multinomial (uniform-within-subtree)
/// state selection.  `dir` = ±1 selects the integration direction via the
/// sign of the step size.  IntegratorError terminates the subtree exactly
/// as a divergence does.
inline NutsTree build_tree(const ManifoldTarget& target,
                           const ConstrainedState& from, int depth, int dir,
                           double h0, const IntegratorConfig& cfg,
                           std::mt19937_64& rng, OpCounters* ops) {
  NutsTree tree;
  if (depth == 0) {
    IntegratorConfig step_cfg = cfg;
    step_cfg.step_size = dir * cfg.step_size;
    try {
      ConstrainedState next = constrained_step(target, from, step_cfg, ops);
      double h = target.hamiltonian(next.cache, next.p);
      tree.n_steps = 1;
      double dh = h0 - h;
      tree.sum_accept = std::min(1.0, std::exp(dh));
      if (!std::isfinite(h) || std::abs(h - h0) > 1000.0) {
        tree.divergent = true;
        tree.ok = false;
        return tree;
      }
      tree.log_sum_w = dh;
      tree.z_minus = next;
      tree.z_plus = next;
      tree.z_prop = std::move(next);
      tree.ok = true;
    } catch (const IntegratorError& err) {
      tree.n_steps = 1;
      tree.divergent = true;
      tree.ok = false;
      tree.error_tag = to_string(err.reason);
    }
    return tree;
  }

  NutsTree first = build_tree(target, from, depth - 1, dir, h0, cfg, rng, ops);
  if (!first.ok) return first;
  const ConstrainedState& edge = dir > 0 ? first.z_plus : first.z_minus;
  NutsTree second = build_tree(target, edge, depth - 1, dir, h0, cfg, rng, ops);

  NutsTree tree2;
  tree2.n_steps = first.n_steps + second.n_steps;
  tree2.sum_accept = first.sum_accept + second.sum_accept;
  tree2.divergent = second.divergent;
  tree2.error_tag = second.error_tag.empty() ? first.error_tag
                                             : second.error_tag;
  if (!second.ok) {
    tree2.ok = false;
    return tree2;
  }
  tree2.log_sum_w = log_add_exp(first.log_sum_w, second.log_sum_w);
  // Uniform multinomial selection between the halves.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double p_second = std::exp(second.log_sum_w - tree2.log_sum_w);
  tree2.z_prop = unif(rng) < p_second ? second.z_prop : first.z_prop;
  tree2.z_minus = dir > 0 ? first.z_minus : second.z_minus;
  tree2.z_plus = dir > 0 ? second.z_plus : first.z_plus;
  tree2.ok = !u_turn(target, tree2.z_minus, tree2.z_plus);
  return tree2;
}

}  // namespace detail

/// Dynamic multinomial transition with no-U-turn termination and
/// biased-progressive sampling across doublings.
inline TransitionResult dynamic_transition(const ManifoldTarget& target,
                                           const ConstrainedState& start,
                                           const IntegratorConfig& cfg,
                                           int max_depth,
                                           std::mt19937_64& rng,
                                           OpCounters* ops = nullptr) {
  OpCounters local;
  ConstrainedState s = start;
  {
    std::normal_distribution<double> nd;
    Vec p(target.Q());
    for (int i = 0; i < target.Q(); ++i)
      p[i] = std::sqrt(target.metric().diag[i]) * nd(rng);
    s.p = target.project(s.cache, p);
    local.projections += 1;
  }
  const double h0 = target.hamiltonian(s.cache, s.p);

  ConstrainedState z_minus = s, z_plus = s, z_prop = s;
  double log_sum_w = 0.0;  // weight exp(h0 − h0) = 1 for the initial state
  double sum_accept = 0.0;
  std::int64_t n_steps = 0;
  bool divergent = false;
  std::string error_tag;
  int depth = 0;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);

  for (; depth < max_depth; ++depth) {
    int dir = coin(rng) == 1 ? 1 : -1;
    const ConstrainedState& edge = dir > 0 ? z_plus : z_minus;
    detail::NutsTree sub = detail::build_tree(target, edge, depth, dir, h0,
                                              cfg, rng, &local);
    sum_accept += sub.sum_accept;
    n_steps += sub.n_steps;
    divergent = divergent || sub.divergent;
    if (!sub.error_tag.empty()) error_tag = sub.error_tag;
    if (!sub.ok) break;
    // Biased-progressive selection: favour the new subtree.
    double p_new = std::exp(std::min(0.0, sub.log_sum_w - log_sum_w));
    if (unif(rng) < p_new) z_prop = sub.z_prop;
    log_sum_w = detail::log_add_exp(log_sum_w, sub.log_sum_w);
    if (dir > 0)
      z_plus = sub.z_plus;
    else
      z_minus = sub.z_minus;
    if (detail::u_turn(target, z_minus, z_plus)) {
      ++depth;
      break;
    }
  }

  TransitionResult out;
  out.state = std::move(z_prop);
  out.accept_stat = n_steps > 0 ? sum_accept / static_cast<double>(n_steps)
                                : 1.0;
  out.hamiltonian = target.hamiltonian(out.state.cache, out.state.p);
  out.depth_or_steps = depth;
  out.newton_iters = static_cast<int>(local.newton_iters);
  out.h2_solves = static_cast<int>(local.h2_solves);
  out.divergent = divergent;
  out.error_tag = std::move(error_tag);
  if (ops != nullptr) *ops += local;
  return out;
}

/// Stan-flavoured dual averaging of log t toward a target acceptance
/// statistic (γ = 0.05, t0 = 10, κ = 0.75, µ = log(10·t_init)).
class DualAveraging {
 public:
  explicit DualAveraging(double t_init, double target = 0.8)
      : mu_(std::log(10.0 * t_init)),
        log_t_(std::log(t_init)),
        log_t_bar_(std::log(t_init)),
        target_(target) {}

  void update(double accept) {
    ++count_;
    const double eta = 1.0 / (count_ + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept);
    log_t_ = mu_ - std::sqrt(static_cast<double>(count_)) / kGamma * h_bar_;
    const double w = std::pow(static_cast<double>(count_), -kKappa);
    log_t_bar_ = w * log_t_ + (1.0 - w) * log_t_bar_;
  }

  double current() const { return std::exp(log_t_); }
  double adapted() const { return std::exp(log_t_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;

  double mu_, log_t_, log_t_bar_, h_bar_ = 0.0, target_;
  int count_ = 0;
};

/// Doubling/halving search for an initial step size whose one-step energy
/// ratio straddles 1/2 (run before dual averaging).  IntegratorError counts
/// as acceptance 0.
template <class StepAccept>
double find_initial_step(double t, StepAccept accept_at) {
  double a = accept_at(t);
  const int dir = a > 0.5 ? 1 : -1;
  for (int iter = 0; iter < 20; ++iter) {
    double t_next = dir > 0 ? 2.0 * t : 0.5 * t;
    double a_next = accept_at(t_next);
    if ((dir > 0 && a_next <= 0.5) || (dir < 0 && a_next >= 0.5))
      return dir > 0 ? t : t_next;
    t = t_next;
    a = a_next;
  }
  return t;
}

/// Everything recorded per chain.
struct ChainTrace {
  int warmup = 0;
  std::vector<Vec> q;                ///< latent draw per iteration
  std::vector<Vec> z;                ///< natural parameters per iteration
  std::vector<double> hamiltonian;
  std::vector<double> accept_stat;
  std::vector<int> n_newton;         ///< Newton iterations in the transition
  std::vector<int> h2_solves;
  std::vector<int> depth;
  std::vector<int> divergent;
  std::vector<std::string> error_tags;
  double adapted_step = 0.0;
  OpCounters ops;
  double wall_seconds = 0.0;

  double n_bar() const {
    std::int64_t it = 0, solves = 0;
    for (std::size_t i = 0; i < n_newton.size(); ++i) {
      it += n_newton[i];
      solves += h2_solves[i];
    }
    return solves > 0 ? static_cast<double>(it) / solves : 0.0;
  }
};

namespace detail {

/// Build the conditional target for one transition: partition (alternating
/// even/shifted), conditioned boundary states read off the current path.
inline ManifoldTarget transition_target(const ModelSpec& m, const Vec& y,
                                        int T, const SamplerConfig& cfg,
                                        int iteration, const Vec& q) {
  BlockPartition part = iteration % 2 == 0 ? even_partition(T, cfg.R)
                                           : shifted_partition(T, cfg.R);
  Mat xbar(m.X, part.bounds.size());
  if (!part.bounds.empty()) {
    GeneratedPath path = generate(m, T, q);
    for (std::size_t b = 0; b < part.bounds.size(); ++b)
      xbar.col(b) = path.x.col(m.S * part.bounds[b]);
  }
  ConstraintSystem sys(m, y, T, part, xbar);
  const int Q = sys.Q();
  return ManifoldTarget(std::move(sys), Metric::identity(Q), cfg.mode,
                        cfg.split);
}

}  // namespace detail

/// Full chain: warm-up with step-size adaptation, then sampling.  The
/// conditioning partition alternates between the even and shifted patterns
/// and the boundary states are refreshed from the current path before each
/// momentum resample.
inline ChainTrace run_chain(const ModelSpec& m, const Vec& y_obs, int T,
                            const SamplerConfig& cfg, const Vec& q_init) {
  cfg.validate(T);
  std::mt19937_64 rng(cfg.seed);
  ChainTrace trace;
  trace.warmup = cfg.warmup;
  const auto t_start = std::chrono::steady_clock::now();

  Vec q = q_init;
  {
    // Precondition: the initial point is on the manifold of the
    // single-block system.
    ConstraintSystem probe(m, y_obs, T, BlockPartition{});
    if (inf_norm(probe.constraint(q)) >= cfg.integrator.theta_c)
      throw InitOffManifold("initial point violates the constraint");
  }

  IntegratorConfig icfg = cfg.integrator;
  if (cfg.split == SplitKind::Gaussian)
    check_gaussian_step(Metric::identity(m.latent_dim(T)), icfg.step_size);

  // Initial step-size search at the first transition's target.
  if (cfg.adapt) {
    ManifoldTarget target =
        detail::transition_target(m, y_obs, T, cfg, 0, q);
    ConstrainedState s0 = initial_state(target, q, rng, &trace.ops);
    double h0 = target.hamiltonian(s0.cache, s0.p);
    icfg.step_size = find_initial_step(icfg.step_size, [&](double t) {
      IntegratorConfig c = icfg;
      c.step_size = t;
      try {
        ConstrainedState s1 = constrained_step(target, s0, c, &trace.ops);
        return std::min(1.0,
                        std::exp(h0 - target.hamiltonian(s1.cache, s1.p)));
      } catch (const IntegratorError&) {
        return 0.0;
      }
    });
  }
  DualAveraging da(icfg.step_size, cfg.target_accept);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.adapt && it == cfg.warmup) icfg.step_size = da.adapted();
    ManifoldTarget target =
        detail::transition_target(m, y_obs, T, cfg, it, q);
    ConstrainedState s = zero_momentum_state(target, q, &trace.ops);
    TransitionResult res =
        cfg.dynamic
            ? dynamic_transition(target, s, icfg, cfg.max_depth, rng,
                                 &trace.ops)
            : static_transition(target, s, cfg.static_steps, icfg, rng,
                                &trace.ops);
    q = res.state.q();

    if (cfg.adapt && it < cfg.warmup) {
      da.update(res.accept_stat);
      icfg.step_size = da.current();
    }

    trace.q.push_back(q);
    trace.z.push_back(m.Z > 0 ? eval(m.g_z, q.head(m.U)) : Vec(0));
    trace.hamiltonian.push_back(res.hamiltonian);
    trace.accept_stat.push_back(res.accept_stat);
    trace.n_newton.push_back(res.newton_iters);
    trace.h2_solves.push_back(res.h2_solves);
    trace.depth.push_back(res.depth_or_steps);
    trace.divergent.push_back(res.divergent ? 1 : 0);
    trace.error_tags.push_back(res.error_tag);
  }
  trace.adapted_step = cfg.adapt ? da.adapted() : icfg.step_size;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_start)
          .count();
  return trace;
}

}  // namespace mhmc

#endif  // MHMC_SAMPLER_HPP
