#pragma once

// Per-instant disaggregation of a regulation requirement across aggregators:
// the exact-penalty objective, its generalized gradient, dynamic average
// consensus, the gradient-descent + consensus dynamics integrated by forward
// Euler, and a centralized solve of the penalized problem.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <utility>
#include <vector>

#include "regnet/abstraction.hpp"
#include "regnet/convexsolve.hpp"
#include "regnet/errors.hpp"
#include "regnet/netgraph.hpp"

namespace regnet::coord {

/// Tolerance under which a penalty argument counts as exactly zero.
inline constexpr double kKinkTolerance = 1e-12;

/// a x + b
struct AffinePiece {
  double slope = 0.0;
  double intercept = 0.0;
};

/// quad x^2 + lin x + max_k pieces_k(x), the last term absent when empty.
struct CostForm {
  double quad = 0.0;
  double lin = 0.0;
  std::vector<AffinePiece> pieces;
};

template <class C>
concept RegulationCost = requires(const C& c, double x) {
  { c.value(x) } -> std::convertible_to<double>;
  { c.gradient(x) } -> std::convertible_to<double>;
  { c.form() } -> std::convertible_to<CostForm>;
};

/// a x^2 + b x + c
struct QuadraticCost {
  double a = 1.0;
  double b = 0.0;
  double c = 0.0;

  double value(double x) const { return (a * x + b) * x + c; }
  double gradient(double x) const { return 2.0 * a * x + b; }
  CostForm form() const { return {a, b, {{0.0, c}}}; }
};

/// Piecewise-linear cost interpolated by an abstraction. Convex samples give
/// a convex interpolant, which equals the maximum of its segments.
class InterpolatedCost {
 public:
  explicit InterpolatedCost(abs::PiecewiseLinear f) : f_(std::move(f)) {}

  double value(double x) const { return f_(x); }
  double gradient(double x) const { return f_.subgradient(x); }
  CostForm form() const {
    CostForm out;
    const auto& xs = f_.knots();
    const auto& ys = f_.values();
    if (xs.size() == 1) {
      out.pieces.push_back({0.0, ys[0]});
      return out;
    }
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      const double s = f_.slope(i);
      out.pieces.push_back({s, ys[i] - s * xs[i]});
    }
    return out;
  }
  const abs::PiecewiseLinear& interpolant() const noexcept { return f_; }

 private:
  abs::PiecewiseLinear f_;
};

/// x -> f(-x)
template <RegulationCost C>
struct Mirrored {
  C inner;

  double value(double x) const { return inner.value(-x); }
  double gradient(double x) const { return -inner.gradient(-x); }
  CostForm form() const {
    CostForm f = inner.form();
    f.lin = -f.lin;
    for (auto& p : f.pieces) p.slope = -p.slope;
    return f;
  }
};

struct Gains {
  double mu = 1000.0;
  double mu2 = 1100.0;
  double nu = 400.0;
  double beta = 400.0;
};

struct Box {
  double lo = 0.0;
  double hi = 0.0;
};

/// Capacity [up, down] intersected with the ramp reach [x_prev - R, x_prev + R].
/// A capacity that the ramp cannot reach collapses to the reachable point
/// closest to it.
inline Box effective_box(double up, double down, double x_prev, double ramp) {
  if (!(up <= down) || !(ramp >= 0.0)) fail(ErrorCode::InvalidArgument, "box needs up <= down and ramp >= 0");
  Box b{std::max(up, x_prev - ramp), std::min(down, x_prev + ramp)};
  if (b.lo > b.hi) {
    const double p = x_prev - ramp > down ? x_prev - ramp : x_prev + ramp;
    b = {p, p};
  }
  return b;
}

template <RegulationCost C>
struct CoordinationProblem {
  std::vector<C> cost;
  std::vector<Box> box;
  double x_r = 0.0;
  Eigen::MatrixXd laplacian;
  Gains gains;
  int informed = 0;  // 0-based index of the aggregator that knows x_r

  int size() const { return static_cast<int>(cost.size()); }
};

template <RegulationCost C>
CoordinationProblem<C> make_problem(std::vector<C> cost, std::vector<Box> box, double x_r,
                                    const graph::DiGraph& comm, Gains gains = {}, int informed = 0) {
  const auto n = static_cast<int>(cost.size());
  if (n == 0 || static_cast<int>(box.size()) != n || comm.vertex_count() != n)
    fail(ErrorCode::InvalidArgument, "costs, boxes and communication graph must have one entry per aggregator");
  if (informed < 0 || informed >= n) fail(ErrorCode::InvalidArgument, "informed aggregator out of range");
  if (!(gains.mu > 0 && gains.mu2 > 0 && gains.nu > 0 && gains.beta > 0))
    fail(ErrorCode::InvalidArgument, "gains must be positive");
  for (const auto& b : box)
    if (!(b.lo <= b.hi)) fail(ErrorCode::InvalidArgument, "box with lo > hi");
  if (!graph::is_strongly_connected(comm) || !graph::is_weight_balanced(comm))
    fail(ErrorCode::GraphHypothesisViolated, "communication graph must be strongly connected and weight-balanced");
  return {std::move(cost), std::move(box), x_r, graph::laplacian(comm), gains, informed};
}

/// One Euler step of z' = u' - nu (z - u) - beta L z - v, v' = nu beta L z.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> dac_step(const Eigen::VectorXd& z, const Eigen::VectorXd& v,
                                                            const Eigen::VectorXd& u,
                                                            const Eigen::VectorXd& u_dot,
                                                            const Eigen::MatrixXd& L, double nu, double beta,
                                                            double dt) {
  const Eigen::VectorXd lz = L * z;
  return {z + dt * (u_dot - nu * (z - u) - beta * lz - v), v + dt * (nu * beta * lz)};
}

/// x_r - 1'x, or its negative when x_r < 0, so that a positive value is
/// always a shortfall.
template <RegulationCost C>
double shortfall(const Eigen::VectorXd& x, const CoordinationProblem<C>& p) {
  const double d = p.x_r - x.sum();
  return p.x_r < 0.0 ? -d : d;
}

/// f(x) + mu2 sum([x_i - hi_i]+ + [lo_i - x_i]+) + mu [shortfall]+
template <RegulationCost C>
double penalty_value(const Eigen::VectorXd& x, const CoordinationProblem<C>& p) {
  double total = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    total += p.cost[k].value(x(i));
    total += p.gains.mu2 * (std::max(0.0, x(i) - p.box[k].hi) + std::max(0.0, p.box[k].lo - x(i)));
  }
  return total + p.gains.mu * std::max(0.0, shortfall(x, p));
}

/// Generalized gradient of f + mu2 (box penalties), taking 0 from [0, mu2]
/// on a box face.
template <RegulationCost C>
Eigen::VectorXd box_penalized_gradient(const Eigen::VectorXd& x, const CoordinationProblem<C>& p) {
  Eigen::VectorXd g(p.size());
  for (int i = 0; i < p.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    double gi = p.cost[k].gradient(x(i));
    if (x(i) - p.box[k].hi > kKinkTolerance) gi += p.gains.mu2;
    if (p.box[k].lo - x(i) > kKinkTolerance) gi -= p.gains.mu2;
    g(i) = gi;
  }
  return g;
}

struct CoordinationState {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  Eigen::VectorXd v;
  double t = 0.0;
};

/// x = x_r at the informed aggregator and 0 elsewhere, z = v = 0. A
/// non-empty `start` replaces the zeros and the informed aggregator absorbs
/// x_r - 1'start, so 1'x(0) = x_r either way.
template <RegulationCost C>
CoordinationState initial_state(const CoordinationProblem<C>& p, const Eigen::VectorXd& start = {}) {
  CoordinationState s{Eigen::VectorXd::Zero(p.size()), Eigen::VectorXd::Zero(p.size()),
                      Eigen::VectorXd::Zero(p.size()), 0.0};
  if (start.size() == p.size()) s.x = start;
  s.x(p.informed) += p.x_r - s.x.sum();
  return s;
}

/// One Euler step of
///   x' = -g + [mu]+_z
///   z' = -nu z - beta L z - v + nu (x_r e - x) + g - [mu]+_z
///   v' = nu beta L z
/// with g the box-penalized gradient.
template <RegulationCost C>
CoordinationState gdac_step(const CoordinationState& s, const CoordinationProblem<C>& p, double dt) {
  const Eigen::VectorXd g = box_penalized_gradient(s.x, p);
  const Eigen::VectorXd push = (s.z.array() > 0.0).select(Eigen::VectorXd::Constant(p.size(), p.gains.mu), 0.0);
  const Eigen::VectorXd lz = p.laplacian * s.z;
  Eigen::VectorXd target = -s.x;
  target(p.informed) += p.x_r;
  const Eigen::VectorXd x_dot = push - g;
  const Eigen::VectorXd z_dot = -p.gains.nu * s.z - p.gains.beta * lz - s.v + p.gains.nu * target - x_dot;
  CoordinationState next{s.x + dt * x_dot, s.z + dt * z_dot, s.v + dt * (p.gains.nu * p.gains.beta * lz),
                         s.t + dt};
  if (!next.x.allFinite() || !next.z.allFinite() || !next.v.allFinite())
    fail(ErrorCode::NonFiniteState, "coordination dynamics diverged at t = " + std::to_string(next.t));
  return next;
}

struct SolveOptions {
  double dt = 1e-3;
  long max_steps = 100000;
  double tol = 1e-4;       // on the block-mean speed, relative to 1 + |x_r|
  int window = 500;        // steps per averaging block
  int sustain = 2;         // consecutive calm blocks required
  int trace_stride = 0;    // 0 disables the trace
  int chatter_steps = 1000;
  long reproject_every = 1;  // steps between removals of the mean of v
  Eigen::VectorXd warm_start;  // empty for the prescribed initialization
};

struct TracePoint {
  long step = 0;
  double t = 0.0;
  Eigen::VectorXd x;
  double sum_x = 0.0;
  double delta_x = 0.0;
  double fp = 0.0;
};

struct InstantResult {
  Eigen::VectorXd x;       // mean of the last complete block of iterates
  Eigen::VectorXd x_last;  // final iterate
  bool converged = false;
  long steps = 0;
  double dt = 0.0;             // step size at the end of the run
  bool dt_halved = false;      // chattering guard fired
  double max_conservation_error = 0.0;  // max |1'z - (x_r - 1'x)|
  double max_consensus_drift = 0.0;     // max |1'v|
  std::vector<TracePoint> trace;
};

namespace detail {

template <RegulationCost C>
CoordinationProblem<Mirrored<C>> mirror(const CoordinationProblem<C>& p) {
  CoordinationProblem<Mirrored<C>> m;
  for (const auto& c : p.cost) m.cost.push_back(Mirrored<C>{c});
  for (const auto& b : p.box) m.box.push_back({-b.hi, -b.lo});
  m.x_r = -p.x_r;
  m.laplacian = p.laplacian;
  m.gains = p.gains;
  m.informed = p.informed;
  return m;
}

inline void negate(InstantResult& r) {
  r.x = -r.x;
  r.x_last = -r.x_last;
  for (auto& tp : r.trace) {
    tp.x = -tp.x;
    tp.sum_x = -tp.sum_x;
    tp.delta_x = -tp.delta_x;
  }
}

template <RegulationCost C>
InstantResult integrate(const CoordinationProblem<C>& p, const SolveOptions& o) {
  InstantResult r;
  r.dt = o.dt;
  const int n = p.size();
  const double speed_tol = o.tol * (1.0 + std::abs(p.x_r));
  const long w = std::max(1, o.window);
  Eigen::VectorXd block_sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd last_mean, prev_mean;

  CoordinationState s = initial_state(p, o.warm_start);
  int calm = 0, alternating = 0;
  double fp_prev = penalty_value(s.x, p), dfp_prev = 0.0;
  auto record = [&](long step) {
    if (o.trace_stride > 0 && step % o.trace_stride == 0)
      r.trace.push_back({step, s.t, s.x, s.x.sum(), p.x_r - s.x.sum(), penalty_value(s.x, p)});
  };
  record(0);
  long step = 0;
  while (step < o.max_steps) {
    s = gdac_step(s, p, r.dt);
    ++step;
    if (o.reproject_every > 0 && step % o.reproject_every == 0) s.v.array() -= s.v.mean();
    const double delta = p.x_r - s.x.sum();
    r.max_conservation_error = std::max(r.max_conservation_error, std::abs(s.z.sum() - delta));
    r.max_consensus_drift = std::max(r.max_consensus_drift, std::abs(s.v.sum()));
    record(step);

    block_sum += s.x;
    if (step % w == 0) {
      prev_mean = std::move(last_mean);
      last_mean = block_sum / static_cast<double>(w);
      block_sum.setZero();
      if (prev_mean.size() > 0) {
        const double speed = (last_mean - prev_mean).cwiseAbs().maxCoeff() / (static_cast<double>(w) * r.dt);
        calm = speed < speed_tol ? calm + 1 : 0;
        if (calm >= o.sustain) {
          r.converged = true;
          break;
        }
      }
    }

    const double fp = penalty_value(s.x, p);
    const double dfp = fp - fp_prev;
    const bool flip = dfp * dfp_prev < 0.0 && std::abs(dfp) > o.tol * (1.0 + std::abs(fp));
    alternating = flip ? alternating + 1 : 0;
    if (!r.dt_halved && alternating >= o.chatter_steps) {
      r.dt *= 0.5;
      r.dt_halved = true;
      alternating = 0;
    }
    fp_prev = fp;
    dfp_prev = dfp;
  }
  r.steps = step;
  r.x_last = s.x;
  r.x = last_mean.size() > 0 ? last_mean : s.x;
  return r;
}

}  // namespace detail

/// Runs the distributed dynamics from the prescribed initialization until
/// the means of consecutive blocks of `window` iterates move slower than
/// tol (1 + |x_r|) for `sustain` blocks in a row, or `max_steps`. A negative
/// requirement is solved on the mirrored problem.
template <RegulationCost C>
InstantResult solve_instant(const CoordinationProblem<C>& p, const SolveOptions& o = {}) {
  if (!(o.dt > 0.0) || o.max_steps < 0) fail(ErrorCode::InvalidArgument, "dt must be positive");
  if (p.size() == 1) {
    InstantResult r;
    r.x = Eigen::VectorXd::Constant(1, std::clamp(p.x_r, p.box[0].lo, p.box[0].hi));
    r.x_last = r.x;
    r.converged = true;
    r.dt = o.dt;
    return r;
  }
  if (p.x_r < 0.0) {
    SolveOptions mo = o;
    mo.warm_start = -o.warm_start;
    InstantResult r = detail::integrate(detail::mirror(p), mo);
    detail::negate(r);
    return r;
  }
  return detail::integrate(p, o);
}

/// 2 max_i max_{x in box_i} |f_i'(x)| + 1; convexity puts the maximum at an
/// end of the box.
template <RegulationCost C>
double penalty_threshold(const CoordinationProblem<C>& p) {
  double m = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    m = std::max({m, std::abs(p.cost[k].gradient(p.box[k].lo)), std::abs(p.cost[k].gradient(p.box[k].hi))});
  }
  return 2.0 * m + 1.0;
}

/// Minimizes f(x) + mu [shortfall]+ over the boxes directly.
template <RegulationCost C>
Eigen::VectorXd centralized_oracle(const CoordinationProblem<C>& p, const opt::SolverSettings& settings = {}) {
  const int n = p.size();
  std::vector<CostForm> forms;
  int epi = 0;
  for (const auto& c : p.cost) {
    forms.push_back(c.form());
    if (!forms.back().pieces.empty()) ++epi;
  }
  // Layout: x (n), s (1), epigraph variables (epi).
  opt::ConvexProgram prog(n + 1 + epi);
  int t = n + 1;
  for (int i = 0; i < n; ++i) {
    const auto& f = forms[static_cast<std::size_t>(i)];
    prog.set_bounds(i, p.box[static_cast<std::size_t>(i)].lo, p.box[static_cast<std::size_t>(i)].hi);
    prog.quadratic()(i, i) = 2.0 * f.quad;
    prog.linear()(i) = f.lin;
    if (f.pieces.empty()) continue;
    prog.linear()(t) = 1.0;
    for (const auto& piece : f.pieces) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(prog.variable_count());
      row(i) = piece.slope;
      row(t) = -1.0;
      prog.add_inequality(row, -piece.intercept);
    }
    ++t;
  }
  prog.set_lower(n, 0.0);
  prog.linear()(n) = p.gains.mu;
  // s >= sign(x_r) (x_r - 1'x)
  const double sign = p.x_r < 0.0 ? -1.0 : 1.0;
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(prog.variable_count());
  row.head(n).setConstant(-sign);
  row(n) = -1.0;
  prog.add_inequality(row, -sign * p.x_r);
  const auto sol = opt::solve(prog, settings);
  if (!sol.optimal()) fail(ErrorCode::NumericalFailure, "centralized penalized program did not solve");
  return sol.x.head(n);
}

}  // namespace regnet::coord
