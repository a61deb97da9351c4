#pragma once

// Microgrid abstraction: regulation capacity, ramp rate and cost of
// regulation computed from the network model, with optional Gaussian load
// uncertainty. Regulation x is the change in tie power, P = P0 + x; negative
// x is up regulation.
//
// Every program below is posed over deviations d = g - g0 and loop flows
// gamma. Line flows are omega = A_g (g0 + d) + A_l l + N gamma.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "regnet/convexsolve.hpp"
#include "regnet/errors.hpp"
#include "regnet/powerflow.hpp"
#include "regnet/probability.hpp"

namespace regnet::abs {

inline constexpr double kCanonicalPerturbation = 1e-9;
inline constexpr double kSaturationMargin = 1e-7;

struct LoadDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  static LoadDistribution constant(Eigen::VectorXd mean) {
    const auto n = mean.size();
    return {std::move(mean), Eigen::MatrixXd::Zero(n, n)};
  }
  static LoadDistribution diagonal(Eigen::VectorXd mean, const Eigen::VectorXd& variance) {
    return {std::move(mean), variance.asDiagonal()};
  }

  bool is_degenerate() const { return cov.size() == 0 || cov.cwiseAbs().maxCoeff() == 0.0; }

  void validate(int load_count) const {
    if (mean.size() != load_count || cov.rows() != load_count || cov.cols() != load_count)
      fail(ErrorCode::InvalidArgument, "load distribution dimensions do not match the network");
    if (!mean.allFinite() || !cov.allFinite())
      fail(ErrorCode::InvalidArgument, "load distribution must be finite");
    if (load_count == 0) return;
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()))
      fail(ErrorCode::InvalidArgument, "load covariance must be symmetric");
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues().minCoeff();
    if (lo < -1e-9 * (1.0 + cov.cwiseAbs().maxCoeff()))
      fail(ErrorCode::InvalidArgument, "load covariance must be positive semidefinite");
  }
};

/// h(g) = sum_p quad_p (g_p - g0_p)^2 + lin_p |g_p - g0_p|.
struct NodeCost {
  Eigen::VectorXd quad;
  Eigen::VectorXd lin;
  Eigen::VectorXd g0;

  static NodeCost of(const flow::NetworkModel& net) {
    NodeCost c;
    c.quad.resize(net.gen_count());
    c.lin.resize(net.gen_count());
    c.g0 = net.g0();
    for (int k = 0; k < net.gen_count(); ++k) {
      c.quad(k) = net.generators()[static_cast<std::size_t>(k)].quad;
      c.lin(k) = net.generators()[static_cast<std::size_t>(k)].lin;
    }
    return c;
  }

  double value(const Eigen::VectorXd& g) const {
    const Eigen::ArrayXd d = (g - g0).array();
    return (quad.array() * d.square()).sum() + (lin.array() * d.abs()).sum();
  }

  bool strictly_convex() const { return quad.size() == 0 || quad.minCoeff() > 0.0; }
  bool has_linear_part() const { return lin.size() > 0 && lin.maxCoeff() > 0.0; }
};

struct RampOptions {
  bool respect_capacity_in_ramp = false;  // adds g + dg <= gmax
};

namespace detail {

// Variable layout of a single-operating-point program.
struct Layout {
  int d = 0;      // deviations start
  int gamma = 0;  // loop flows start
  int extra = 0;  // first free slot after d and gamma
};

inline Layout layout(const flow::NetworkModel& net, int offset = 0) {
  return {offset, offset + net.gen_count(), offset + net.gen_count() + net.loop_count()};
}

/// |A_g (base + d) + A_l l + N gamma| <= limit, with d and gamma at `at`.
inline void add_flow_rows(opt::ConvexProgram& p, const flow::NetworkModel& net, const Layout& at,
                          const Eigen::VectorXd& base, const Eigen::VectorXd& l,
                          const Eigen::VectorXd& limit) {
  const Eigen::VectorXd fixed = net.gen_flow() * base + net.load_flow() * l;
  const int ng = net.gen_count();
  const int nc = net.loop_count();
  for (int j = 0; j < net.line_count(); ++j) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p.variable_count());
    row.segment(at.d, ng) = net.gen_flow().row(j);
    if (nc > 0) row.segment(at.gamma, nc) = net.loops().row(j);
    p.add_inequality(row, limit(j) - fixed(j));
    p.add_inequality(-row, limit(j) + fixed(j));
  }
}

inline void add_deviation_bounds(opt::ConvexProgram& p, const flow::NetworkModel& net,
                                 const Layout& at) {
  const Eigen::VectorXd lo = net.gmin() - net.g0();
  const Eigen::VectorXd hi = net.gmax() - net.g0();
  for (int k = 0; k < net.gen_count(); ++k) p.set_bounds(at.d + k, lo(k), hi(k));
}

/// sum d = target.
inline void add_total_row(opt::ConvexProgram& p, const flow::NetworkModel& net, const Layout& at,
                          double target) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p.variable_count());
  row.segment(at.d, net.gen_count()).setOnes();
  p.add_equality(row, target);
}

/// h over the deviations at `at`, with epigraph slots for the absolute
/// values starting at `epi` when the cost has a linear part.
inline void add_cost(opt::ConvexProgram& p, const NodeCost& cost, const Layout& at, int epi,
                     double perturbation) {
  const int ng = static_cast<int>(cost.quad.size());
  for (int k = 0; k < ng; ++k) p.quadratic()(at.d + k, at.d + k) = 2.0 * (cost.quad(k) + perturbation);
  if (!cost.has_linear_part()) return;
  for (int k = 0; k < ng; ++k) {
    p.linear()(epi + k) = cost.lin(k);
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p.variable_count());
    row(at.d + k) = 1.0;
    row(epi + k) = -1.0;
    p.add_inequality(row, 0.0);
    row(at.d + k) = -1.0;
    p.add_inequality(row, 0.0);
  }
}

inline int epigraph_slots(const NodeCost& cost) {
  return cost.has_linear_part() ? static_cast<int>(cost.quad.size()) : 0;
}

/// Total deviation that realizes tie power P0 + x at load l.
inline double deviation_total(const flow::NetworkModel& net, double x, const Eigen::VectorXd& l) {
  return l.sum() - net.baseline_tie() - x - net.g0().sum();
}

inline void check_load(const flow::NetworkModel& net, const Eigen::VectorXd& l) {
  if (l.size() != net.load_count())
    fail(ErrorCode::InvalidArgument, "load vector length does not match the network");
}

}  // namespace detail

/// Capacity interval [up, down] = [x_bar, x_underbar] and the operating
/// points at its ends.
struct Capacity {
  double up = 0.0;
  double down = 0.0;
  Eigen::VectorXd g_up;
  Eigen::VectorXd g_down;
};

namespace detail {

// Extreme total generation subject to bounds and flows; sense +1 maximizes.
inline std::optional<Eigen::VectorXd> extreme_generation(const flow::NetworkModel& net,
                                                         const Eigen::VectorXd& l,
                                                         const Eigen::VectorXd& limit,
                                                         double sense) {
  const Layout at = layout(net);
  opt::ConvexProgram p(at.extra);
  p.linear().segment(at.d, net.gen_count()).setConstant(-sense);
  add_deviation_bounds(p, net, at);
  add_flow_rows(p, net, at, net.g0(), l, limit);
  const auto sol = opt::solve(p);
  if (sol.status == opt::Status::Infeasible) return std::nullopt;
  if (!sol.optimal()) fail(ErrorCode::NumericalFailure, "capacity program is unbounded");
  return Eigen::VectorXd(net.g0() + sol.x.segment(at.d, net.gen_count()));
}

}  // namespace detail

/// Deterministic capacity at load l: x_bar = P_min - P0, x_underbar = P_max - P0.
inline Capacity capacity_bounds_deterministic(const flow::NetworkModel& net,
                                              const Eigen::VectorXd& l) {
  detail::check_load(net, l);
  const auto hi = detail::extreme_generation(net, l, net.flow_limit(), +1.0);
  if (!hi) fail(ErrorCode::InfeasibleBaseline, "no generation satisfies the flow limits at this load");
  const auto lo = detail::extreme_generation(net, l, net.flow_limit(), -1.0);
  Capacity c;
  c.g_up = *hi;
  c.g_down = *lo;
  c.up = l.sum() - hi->sum() - net.baseline_tie();
  c.down = l.sum() - lo->sum() - net.baseline_tie();
  return c;
}

/// Standard deviation of each line flow induced by the load covariance.
inline Eigen::VectorXd flow_standard_deviation(const flow::NetworkModel& net,
                                               const LoadDistribution& dist) {
  const Eigen::MatrixXd& a = net.load_flow();
  return (a * dist.cov).cwiseProduct(a).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
}

/// omega_bar + K with K_j = sqrt(2) erfinv(eps - 1) sigma_j. eps = 1 is
/// accepted and gives K = 0.
inline Eigen::VectorXd tightened_flow_limits(const flow::NetworkModel& net,
                                             const LoadDistribution& dist, double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) fail(ErrorCode::EpsilonOutOfRange, "epsilon must lie in (0, 1)");
  dist.validate(net.load_count());
  const double factor = std::sqrt(2.0) * prob::erfinv(eps - 1.0);
  return net.flow_limit() + factor * flow_standard_deviation(net, dist);
}

namespace detail {

// Chance-constrained extreme: optimize t subject to the tie-power chance
// constraint and the tightened line limits at mean load. Returns (t, g).
inline std::optional<std::pair<double, Eigen::VectorXd>> chance_extreme(
    const flow::NetworkModel& net, const LoadDistribution& dist, const Eigen::VectorXd& limit,
    double eps_prime, bool up) {
  const double quantile = std::sqrt(2.0) * prob::erfinv(2.0 * eps_prime - 1.0);
  const double sigma_p = std::sqrt(std::max(0.0, dist.cov.sum()));
  const auto g = extreme_generation(net, dist.mean, limit, up ? +1.0 : -1.0);
  if (!g) return std::nullopt;
  const double mean_tie = dist.mean.sum() - g->sum();
  // Up: min t with mean_tie - t <= q sigma. Down: max t with t - mean_tie <= q sigma.
  const double t = up ? mean_tie - quantile * sigma_p : mean_tie + quantile * sigma_p;
  return std::make_pair(t, *g);
}

}  // namespace detail

/// Chance-constrained capacity: line limits tightened at confidence eps, tie
/// power bound held with probability 1 - eps'.
inline Capacity capacity_bounds_chance(const flow::NetworkModel& net, const LoadDistribution& dist,
                                       double eps_prime, double eps) {
  if (!(eps_prime > 0.0 && eps_prime < 1.0))
    fail(ErrorCode::EpsilonOutOfRange, "epsilon' must lie in (0, 1)");
  if (!(eps > 0.0 && eps < 1.0)) fail(ErrorCode::EpsilonOutOfRange, "epsilon must lie in (0, 1)");
  const Eigen::VectorXd limit = tightened_flow_limits(net, dist, eps);
  const auto up = detail::chance_extreme(net, dist, limit, eps_prime, true);
  if (!up) fail(ErrorCode::InfeasibleAtConfidence, "chance-tightened flow limits are infeasible");
  const auto down = detail::chance_extreme(net, dist, limit, eps_prime, false);
  Capacity c;
  c.up = up->first - net.baseline_tie();
  c.down = down->first - net.baseline_tie();
  c.g_up = up->second;
  c.g_down = down->second;
  return c;
}

/// Maximal total ramp 1'dg with dg <= r and post-ramp flows within `limit`
/// (nominal limits when null) at load l.
inline double ramp_rate_at(const flow::NetworkModel& net, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& l, const Eigen::VectorXd* limit = nullptr,
                           const RampOptions& opts = {}) {
  detail::check_load(net, l);
  if (g.size() != net.gen_count()) fail(ErrorCode::InvalidArgument, "operating point length mismatch");
  const Eigen::VectorXd& lim = limit ? *limit : net.flow_limit();
  const double tol = 1e-7 * (1.0 + net.gmax().cwiseAbs().maxCoeff());
  if (((g - net.gmin()).array() < -tol).any() || ((g - net.gmax()).array() > tol).any())
    fail(ErrorCode::InfeasibleOperatingPoint, "operating point outside generator limits");
  const flow::Injection inj{l.sum() - g.sum(), g, l};
  if (!flow::feasible_flow_exists(net, inj, &lim).feasible)
    fail(ErrorCode::InfeasibleOperatingPoint, "operating point violates flow limits");

  const detail::Layout at = detail::layout(net);
  opt::ConvexProgram p(at.extra);
  p.linear().segment(at.d, net.gen_count()).setConstant(-1.0);
  const Eigen::VectorXd r = net.ramp();
  const Eigen::VectorXd head = net.gmax() - g;
  for (int k = 0; k < net.gen_count(); ++k)
    p.set_upper(at.d + k, opts.respect_capacity_in_ramp ? std::min(r(k), std::max(0.0, head(k))) : r(k));
  detail::add_flow_rows(p, net, at, g, l, lim);
  const auto sol = opt::solve(p);
  if (!sol.optimal()) fail(ErrorCode::InfeasibleOperatingPoint, "ramp program did not solve");
  return std::max(0.0, -sol.objective_value);
}

/// Maximal total ramp down -1'dg with dg >= -r.
inline double ramp_down_rate_at(const flow::NetworkModel& net, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& l, const Eigen::VectorXd* limit = nullptr) {
  detail::check_load(net, l);
  const Eigen::VectorXd& lim = limit ? *limit : net.flow_limit();
  const detail::Layout at = detail::layout(net);
  opt::ConvexProgram p(at.extra);
  p.linear().segment(at.d, net.gen_count()).setConstant(1.0);
  const Eigen::VectorXd r = net.ramp();
  for (int k = 0; k < net.gen_count(); ++k) p.set_lower(at.d + k, -r(k));
  detail::add_flow_rows(p, net, at, g, l, lim);
  const auto sol = opt::solve(p);
  if (!sol.optimal()) fail(ErrorCode::InfeasibleOperatingPoint, "ramp-down program did not solve");
  return std::max(0.0, -sol.objective_value);
}

/// Ramp rate with Gaussian loads: mean load and limits tightened at eps.
inline double ramp_rate_at_chance(const flow::NetworkModel& net, const Eigen::VectorXd& g,
                                  const LoadDistribution& dist, double eps) {
  const Eigen::VectorXd lim = tightened_flow_limits(net, dist, eps);
  return ramp_rate_at(net, g, dist.mean, &lim);
}

/// Tree networks only: the ramp program written through the path matrix,
/// P1' dg <= omega_bar + P2' l - P1' g with [P1' P2'] = |P_ref'|.
inline double ramp_rate_tree_form(const flow::NetworkModel& net, const Eigen::VectorXd& g,
                                  const Eigen::VectorXd& l) {
  if (!net.is_tree()) fail(ErrorCode::NotATree, "path-matrix ramp form needs a tree network");
  const Eigen::MatrixXd abs_pt = net.path().transpose().cwiseAbs();  // m x (n - 1)
  Eigen::MatrixXd p1t(net.line_count(), net.gen_count());
  Eigen::MatrixXd p2t(net.line_count(), net.load_count());
  for (int k = 0; k < net.gen_count(); ++k)
    p1t.col(k) = abs_pt.col(net.gen_buses()[static_cast<std::size_t>(k)] - 1);
  for (int k = 0; k < net.load_count(); ++k)
    p2t.col(k) = abs_pt.col(net.load_buses()[static_cast<std::size_t>(k)] - 1);
  opt::ConvexProgram p(net.gen_count());
  p.linear().setConstant(-1.0);
  const Eigen::VectorXd r = net.ramp();
  for (int k = 0; k < net.gen_count(); ++k) p.set_upper(k, r(k));
  const Eigen::VectorXd rhs = net.flow_limit() + p2t * l - p1t * g;
  for (int j = 0; j < net.line_count(); ++j) p.add_inequality(p1t.row(j), rhs(j));
  const auto sol = opt::solve(p);
  if (!sol.optimal()) fail(ErrorCode::InfeasibleOperatingPoint, "ramp program did not solve");
  return -sol.objective_value;
}

/// Cost-minimizing operating point for regulation x at load l.
struct Fiber {
  double cost = 0.0;   // h(g)
  Eigen::VectorXd g;
  Eigen::VectorXd gamma;
};

namespace detail {

inline std::optional<Fiber> solve_fiber(const flow::NetworkModel& net, const NodeCost& cost,
                                        double total_deviation, const Eigen::VectorXd& l,
                                        const Eigen::VectorXd& limit, double perturbation) {
  const Layout at = layout(net);
  opt::ConvexProgram p(at.extra + epigraph_slots(cost));
  add_deviation_bounds(p, net, at);
  add_flow_rows(p, net, at, net.g0(), l, limit);
  add_total_row(p, net, at, total_deviation);
  add_cost(p, cost, at, at.extra, perturbation);
  const auto sol = opt::solve(p);
  if (sol.status == opt::Status::Infeasible) return std::nullopt;
  if (!sol.optimal()) fail(ErrorCode::NumericalFailure, "cost program is unbounded");
  Fiber f;
  f.g = net.g0() + sol.x.segment(at.d, net.gen_count());
  f.gamma = sol.x.segment(at.gamma, net.loop_count());
  f.cost = cost.value(f.g);
  return f;
}

}  // namespace detail

/// f(x): minimal h(g) subject to generator limits, flow limits and tie power
/// P0 + x at load l.
inline double cost_of_regulation(const flow::NetworkModel& net, const NodeCost& cost, double x,
                                 const Eigen::VectorXd& l) {
  detail::check_load(net, l);
  const auto f = detail::solve_fiber(net, cost, detail::deviation_total(net, x, l), l,
                                     net.flow_limit(), 0.0);
  if (!f) fail(ErrorCode::RegulationOutOfRange, "regulation " + std::to_string(x) + " is not attainable");
  return f->cost;
}

/// Canonical minimizer of the regulation-x fiber. Costs with flat directions
/// are made strictly convex by a 1e-9 ||g - g0||^2 term.
inline Fiber canonical_operating_point(const flow::NetworkModel& net, const NodeCost& cost,
                                       double x, const Eigen::VectorXd& l,
                                       const Eigen::VectorXd* limit = nullptr) {
  detail::check_load(net, l);
  const double eps = cost.strictly_convex() ? 0.0 : kCanonicalPerturbation;
  const auto f = detail::solve_fiber(net, cost, detail::deviation_total(net, x, l), l,
                                     limit ? *limit : net.flow_limit(), eps);
  if (!f) fail(ErrorCode::RegulationOutOfRange, "regulation " + std::to_string(x) + " is not attainable");
  return *f;
}

/// R(x): ramp rate at the canonical cost-minimizing operating point for x.
inline double ramp_rate_of_regulation(const flow::NetworkModel& net, const NodeCost& cost, double x,
                                      const Eigen::VectorXd& l, const RampOptions& opts = {}) {
  const Fiber f = canonical_operating_point(net, cost, x, l);
  return ramp_rate_at(net, f.g, l, nullptr, opts);
}

/// f(x, x_prev): joint program over the operating points for x_prev and x,
/// linked by the ramp constraint g - g_prev <= r.
inline double cost_with_ramp(const flow::NetworkModel& net, const NodeCost& cost, double x,
                             double x_prev, const Eigen::VectorXd& l) {
  detail::check_load(net, l);
  for (double v : {x, x_prev})
    if (!detail::solve_fiber(net, NodeCost{Eigen::VectorXd::Zero(net.gen_count()),
                                           Eigen::VectorXd::Zero(net.gen_count()), net.g0()},
                             detail::deviation_total(net, v, l), l, net.flow_limit(), 0.0))
      fail(ErrorCode::RegulationOutOfRange, "regulation " + std::to_string(v) + " is not attainable");

  const detail::Layout prev = detail::layout(net);
  const detail::Layout cur = detail::layout(net, prev.extra);
  opt::ConvexProgram p(cur.extra + detail::epigraph_slots(cost));
  detail::add_deviation_bounds(p, net, prev);
  detail::add_deviation_bounds(p, net, cur);
  detail::add_flow_rows(p, net, prev, net.g0(), l, net.flow_limit());
  detail::add_flow_rows(p, net, cur, net.g0(), l, net.flow_limit());
  detail::add_total_row(p, net, prev, detail::deviation_total(net, x_prev, l));
  detail::add_total_row(p, net, cur, detail::deviation_total(net, x, l));
  const Eigen::VectorXd r = net.ramp();
  for (int k = 0; k < net.gen_count(); ++k) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p.variable_count());
    row(cur.d + k) = 1.0;
    row(prev.d + k) = -1.0;
    p.add_inequality(row, r(k));
  }
  detail::add_cost(p, cost, cur, cur.extra, 0.0);
  const auto sol = opt::solve(p);
  if (sol.status == opt::Status::Infeasible)
    fail(ErrorCode::Infeasible, "ramp limits cannot move regulation from " + std::to_string(x_prev) +
                                    " to " + std::to_string(x));
  if (!sol.optimal()) fail(ErrorCode::NumericalFailure, "ramp cost program is unbounded");
  return cost.value(net.g0() + sol.x.segment(cur.d, net.gen_count()));
}

/// Whether some controllable bus reaches the tie bus through lines that are
/// strictly below their limits at the maximal up-regulation point.
inline bool min_ramp_nonzero(const flow::NetworkModel& net, const Eigen::VectorXd& l) {
  const Capacity cap = capacity_bounds_deterministic(net, l);
  const Fiber at_up = canonical_operating_point(net, NodeCost::of(net), cap.up, l);
  const Eigen::VectorXd w = net.flows(at_up.g, l, at_up.gamma);
  const int n = net.bus_count();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int j = 0; j < net.line_count(); ++j) {
    if (std::abs(w(j)) >= net.flow_limit()(j) * (1.0 - kSaturationMargin)) continue;
    const auto& e = net.graph().edge(j);
    adj[static_cast<std::size_t>(e.tail - 1)].push_back(e.head - 1);
    adj[static_cast<std::size_t>(e.head - 1)].push_back(e.tail - 1);
  }
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<int> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : adj[static_cast<std::size_t>(u)])
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
  }
  for (int b : net.gen_buses())
    if (seen[static_cast<std::size_t>(b)]) return true;
  return false;
}

/// Piecewise-linear interpolant on strictly increasing knots, extended
/// linearly beyond the ends with the end slopes.
class PiecewiseLinear {
 public:
  PiecewiseLinear() = default;
  PiecewiseLinear(std::vector<double> xs, std::vector<double> ys) : xs_(std::move(xs)), ys_(std::move(ys)) {
    if (xs_.empty() || xs_.size() != ys_.size())
      fail(ErrorCode::InvalidArgument, "interpolant needs matching, non-empty samples");
    for (std::size_t i = 1; i < xs_.size(); ++i)
      if (!(xs_[i] > xs_[i - 1])) fail(ErrorCode::InvalidArgument, "interpolation knots must increase");
  }

  const std::vector<double>& knots() const noexcept { return xs_; }
  const std::vector<double>& values() const noexcept { return ys_; }
  double front() const { return xs_.front(); }
  double back() const { return xs_.back(); }

  double operator()(double x) const {
    if (xs_.size() == 1) return ys_[0];
    const std::size_t i = segment(x);
    return ys_[i] + slope(i) * (x - xs_[i]);
  }

  /// Slope of segment i (between knots i and i + 1).
  double slope(std::size_t i) const {
    if (xs_.size() == 1) return 0.0;
    return (ys_[i + 1] - ys_[i]) / (xs_[i + 1] - xs_[i]);
  }

  double left_slope(double x) const {
    if (xs_.size() == 1) return 0.0;
    const auto it = std::lower_bound(xs_.begin(), xs_.end(), x);
    const auto k = static_cast<std::size_t>(it - xs_.begin());
    if (k == 0) return slope(0);
    return slope(std::min(k - 1, xs_.size() - 2));
  }

  double right_slope(double x) const {
    if (xs_.size() == 1) return 0.0;
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    const auto k = static_cast<std::size_t>(it - xs_.begin());
    if (k == 0) return slope(0);
    return slope(std::min(k - 1, xs_.size() - 2));
  }

  /// Segment slope inside a segment, mean of the one-sided slopes at a knot.
  double subgradient(double x) const { return 0.5 * (left_slope(x) + right_slope(x)); }

 private:
  std::size_t segment(double x) const {
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    const auto k = static_cast<std::size_t>(it - xs_.begin());
    if (k == 0) return 0;
    return std::min(k - 1, xs_.size() - 2);
  }

  std::vector<double> xs_;
  std::vector<double> ys_;
};

struct MicrogridAbstraction {
  double up = 0.0;    // x_bar <= 0
  double down = 0.0;  // x_underbar >= 0
  PiecewiseLinear cost;
  PiecewiseLinear ramp;
  Eigen::VectorXd g_up;
  Eigen::VectorXd g_down;
  double cost_at_up = 0.0;    // h(g_up)
  double cost_at_down = 0.0;  // h(g_down)
  double ramp_at_up = 0.0;    // ramp rate at g_up
  double ramp_at_down = 0.0;  // ramp-down rate at g_down

  double f(double x) const { return cost(x); }
  double gradient(double x) const { return cost.subgradient(x); }
  double R(double x) const { return std::max(0.0, ramp(std::clamp(x, up, down))); }
};

struct AbstractionOptions {
  int grid_size = 101;
  RampOptions ramp;
};

/// Grid with (grid_size - 1) / 2 uniform intervals on each side of zero.
inline std::vector<double> regulation_grid(double up, double down, int grid_size) {
  if (grid_size < 3 || grid_size % 2 == 0)
    fail(ErrorCode::InvalidArgument, "grid size must be odd and at least 3");
  const int k = (grid_size - 1) / 2;
  std::vector<double> xs;
  if (up < 0.0)
    for (int i = 0; i < k; ++i) xs.push_back(up * static_cast<double>(k - i) / k);
  xs.push_back(0.0);
  if (down > 0.0)
    for (int i = 1; i <= k; ++i) xs.push_back(down * static_cast<double>(i) / k);
  return xs;
}

/// Capacities, ramp-rate and cost interpolants for one microgrid. A
/// degenerate distribution gives the deterministic abstraction at its mean.
inline MicrogridAbstraction build_abstraction(const flow::NetworkModel& net,
                                              const LoadDistribution& dist, double eps_prime,
                                              double eps, const AbstractionOptions& opts = {}) {
  dist.validate(net.load_count());
  const NodeCost cost = NodeCost::of(net);
  const Eigen::VectorXd& l = dist.mean;
  const Capacity det = capacity_bounds_deterministic(net, l);
  MicrogridAbstraction a;
  Eigen::VectorXd chance_limit = net.flow_limit();
  double up_total = 0.0, down_total = 0.0;  // total deviation at the ends
  if (dist.is_degenerate()) {
    a.up = det.up;
    a.down = det.down;
  } else {
    const Capacity ch = capacity_bounds_chance(net, dist, eps_prime, eps);
    chance_limit = tightened_flow_limits(net, dist, eps);
    a.up = std::max(ch.up, det.up);
    a.down = std::min(ch.down, det.down);
    up_total = ch.g_up.sum() - net.g0().sum();
    down_total = ch.g_down.sum() - net.g0().sum();
  }
  a.up = std::min(a.up, 0.0);
  a.down = std::max(a.down, 0.0);

  std::vector<double> fs, rs;
  const auto xs = regulation_grid(a.up, a.down, opts.grid_size);
  for (double x : xs) {
    const Fiber fib = canonical_operating_point(net, cost, x, l);
    fs.push_back(cost_of_regulation(net, cost, x, l));
    rs.push_back(ramp_rate_at(net, fib.g, l, nullptr, opts.ramp));
  }
  a.cost = PiecewiseLinear(xs, fs);
  a.ramp = PiecewiseLinear(xs, rs);

  // Bid operating points: cheapest points on the optimal faces of the
  // capacity programs, under the same limits that produced the capacity.
  const double perturb = cost.strictly_convex() ? 0.0 : kCanonicalPerturbation;
  auto end_point = [&](double x, double chance_total, bool up_side) -> Eigen::VectorXd {
    if (x == 0.0) return net.g0();
    if (dist.is_degenerate() || (up_side ? x == det.up : x == det.down))
      return canonical_operating_point(net, cost, x, l).g;
    const auto f = detail::solve_fiber(net, cost, chance_total, l, chance_limit, perturb);
    if (!f) fail(ErrorCode::NumericalFailure, "chance capacity point could not be recovered");
    return f->g;
  };
  a.g_up = end_point(a.up, up_total, true);
  a.g_down = end_point(a.down, down_total, false);
  a.cost_at_up = cost.value(a.g_up);
  a.cost_at_down = cost.value(a.g_down);
  const Eigen::VectorXd* lim = dist.is_degenerate() ? nullptr : &chance_limit;
  a.ramp_at_up = ramp_rate_at(net, a.g_up, l, lim, opts.ramp);
  a.ramp_at_down = ramp_down_rate_at(net, a.g_down, l, lim);
  return a;
}

}  // namespace regnet::abs
