#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "regnet/abstraction.hpp"
#include "test_support.hpp"

namespace {

using namespace regnet;
using namespace regnet::abs;
using flow::BusKind;
using flow::Generator;
using flow::NetworkModel;
using fixtures::random_network;
using fixtures::random_tree;
using fixtures::three_bus;
using fixtures::two_bus;

const Eigen::VectorXd kNoLoad(0);

// Independent oracle: bisection on erfc(x) = 1 - |y| over [0, 10], mirrored
// for negative y.
double erfinv_bisection(double y) {
  const double target = 1.0 - std::abs(y);
  double lo = 0.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid) > target ? lo : hi) = mid;
  }
  return std::copysign(0.5 * (lo + hi), y);
}

TEST(Erfinv, MatchesBisection) {
  for (double y = -0.999999; y < 1.0; y += 0.0137)
    EXPECT_NEAR(prob::erfinv(y), erfinv_bisection(y), 1e-12) << y;
  for (double y : {-1 + 4.2e-5, -1 + 8.4e-5, -1 + 1e-12, 1 - 1e-10})
    EXPECT_NEAR(prob::erfinv(y), erfinv_bisection(y), 1e-10 * (1 + std::abs(erfinv_bisection(y))));
  EXPECT_EQ(prob::erfinv(0.0), 0.0);
}

TEST(CapacityDeterministic, TwoBusLineBinds) {
  const auto c = capacity_bounds_deterministic(two_bus(3.0), kNoLoad);
  EXPECT_NEAR(c.up, -3.0, 1e-9);
  EXPECT_NEAR(c.down, 3.0, 1e-9);
}

TEST(CapacityDeterministic, TwoBusGeneratorBinds) {
  const auto c = capacity_bounds_deterministic(two_bus(10.0), kNoLoad);
  EXPECT_NEAR(c.up, -5.0, 1e-9);
  EXPECT_NEAR(c.down, 5.0, 1e-9);
}

TEST(CapacityDeterministic, ThreeBusMatchesGrid) {
  const auto net = three_bus(3.0, 3.0, {0.0, 6.0, 2.0, 1.0, 1.0, 0.0}, 0.0);
  const Eigen::VectorXd l = Eigen::VectorXd::Constant(1, 2.0);
  const auto c = capacity_bounds_deterministic(net, l);
  double pmin = 1e300, pmax = -1e300;
  for (int i = 0; i <= 600; ++i) {
    const double g = 0.01 * i;
    const double p = 2.0 - g;
    const Eigen::VectorXd w = flow::tree_flows(net, {p, Eigen::VectorXd::Constant(1, g), l});
    if ((w.cwiseAbs().array() <= 3.0 + 1e-12).all()) {
      pmin = std::min(pmin, p);
      pmax = std::max(pmax, p);
    }
  }
  EXPECT_NEAR(c.up, pmin - net.baseline_tie(), 1e-9);
  EXPECT_NEAR(c.down, pmax - net.baseline_tie(), 1e-9);
}

TEST(CapacityDeterministic, InfeasibleBaseline) {
  // The load line cannot carry the load.
  const auto net = three_bus(3.0, 1.0, {0.0, 6.0, 0.0, 1.0, 1.0, 0.0}, 2.0);
  try {
    capacity_bounds_deterministic(net, Eigen::VectorXd::Constant(1, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleBaseline);
  }
}

TEST(TightenedLimits, ThreeBusExample) {
  const auto net = three_bus(5.0, 5.0, {0.0, 6.0, 2.0, 1.0, 1.0, 0.0}, 0.0);
  ASSERT_NEAR(net.load_flow()(1, 0), 1.0, 1e-12);
  const auto dist = LoadDistribution{Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Constant(1, 1, 4.0)};
  const double eps = 1.0 - std::erf(1.0 / std::sqrt(2.0));
  const Eigen::VectorXd lim = tightened_flow_limits(net, dist, eps);
  const double k_oracle = std::sqrt(2.0) * erfinv_bisection(eps - 1.0) * 2.0;
  EXPECT_NEAR(k_oracle, -2.0, 1e-10);
  EXPECT_NEAR(lim(1), 5.0 + k_oracle, 1e-10);
  EXPECT_NEAR(tightened_flow_limits(net, dist, 1.0)(1), 5.0, 0.0);
}

TEST(TightenedLimits, ScalesWithStandardDeviation) {
  std::mt19937_64 rng(61);
  for (int t = 0; t < 10; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 9));
    const Eigen::VectorXd var = rn.load.array().square() * 0.25;
    const auto d1 = LoadDistribution::diagonal(rn.load, var);
    const auto d4 = LoadDistribution::diagonal(rn.load, 4.0 * var);
    const Eigen::VectorXd k1 = tightened_flow_limits(rn.net, d1, 0.1) - rn.net.flow_limit();
    const Eigen::VectorXd k4 = tightened_flow_limits(rn.net, d4, 0.1) - rn.net.flow_limit();
    EXPECT_LE((k4 - 2.0 * k1).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(k1.maxCoeff(), 0.0);
  }
}

TEST(TightenedLimits, RejectsEpsilonOutOfRange) {
  const auto net = two_bus(3.0);
  const auto dist = LoadDistribution::constant(kNoLoad);
  for (double eps : {0.0, -0.1, 1.5}) {
    try {
      tightened_flow_limits(net, dist, eps);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::EpsilonOutOfRange);
    }
  }
}

TEST(CapacityChance, ReducesToDeterministicWithoutVariance) {
  std::mt19937_64 rng(67);
  for (int t = 0; t < 10; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 8));
    const auto c = capacity_bounds_chance(rn.net, LoadDistribution::constant(rn.load), 0.5, 0.05);
    const auto d = capacity_bounds_deterministic(rn.net, rn.load);
    EXPECT_NEAR(c.up, d.up, 1e-9);
    EXPECT_NEAR(c.down, d.down, 1e-9);
  }
}

TEST(CapacityChance, GrowsWithRiskLevels) {
  std::mt19937_64 rng(71);
  for (int t = 0; t < 10; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 10), 0.4, 3.0);
    const auto dist = LoadDistribution::diagonal(rn.load, rn.load.array().square() * 0.01);
    const auto lo = capacity_bounds_chance(rn.net, dist, 1e-1, 4.2e-5);
    const auto hi = capacity_bounds_chance(rn.net, dist, 2e-1, 8.4e-5);
    EXPECT_GE(-hi.up, -lo.up);
    EXPECT_GE(hi.down, lo.down);
  }
}

TEST(CapacityChance, MonteCarloLineViolationWithinRisk) {
  const auto net = three_bus(6.0, 4.0, {0.0, 6.0, 2.0, 1.0, 1.0, 0.0}, 0.0);
  const auto dist = LoadDistribution{Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Constant(1, 1, 0.25)};
  const double eps = 0.1;
  const Eigen::VectorXd lim = tightened_flow_limits(net, dist, eps);
  const auto c = capacity_bounds_chance(net, dist, 0.1, eps);
  std::mt19937_64 rng(73);
  prob::NormalSampler sample(dist.mean, dist.cov);
  const int draws = 100000;
  Eigen::VectorXi violations = Eigen::VectorXi::Zero(net.line_count());
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd w = net.flows(c.g_up, sample(rng));
    for (int j = 0; j < net.line_count(); ++j)
      if (std::abs(w(j)) > net.flow_limit()(j)) ++violations(j);
  }
  const double band = eps + 3.0 * std::sqrt(eps * (1 - eps) / draws);
  for (int j = 0; j < net.line_count(); ++j) EXPECT_LE(violations(j) / double(draws), band);
  // The flows at the mean respect the tightened limits.
  EXPECT_LE((net.flows(c.g_up, dist.mean).cwiseAbs() - lim).maxCoeff(), 1e-7);
}

TEST(RampRate, TwoBusExamples) {
  const auto net = two_bus(3.0, -5.0, 5.0, 10.0);
  EXPECT_NEAR(ramp_rate_at(net, Eigen::VectorXd::Constant(1, 0.0), kNoLoad), 3.0, 1e-9);
  EXPECT_NEAR(ramp_rate_at(net, Eigen::VectorXd::Constant(1, 2.0), kNoLoad), 1.0, 1e-9);
  EXPECT_NEAR(ramp_rate_at(net, Eigen::VectorXd::Constant(1, 3.0), kNoLoad), 0.0, 1e-9);
  const auto wide = two_bus(10.0, -5.0, 5.0, 10.0);
  // Post-ramp flow is -(g + dg), so the line binds only for g > 0.
  for (double g : {-4.0, -1.0, 0.0})
    EXPECT_NEAR(ramp_rate_at(wide, Eigen::VectorXd::Constant(1, g), kNoLoad), 10.0, 1e-9);
  EXPECT_NEAR(ramp_rate_at(wide, Eigen::VectorXd::Constant(1, 4.9), kNoLoad), 5.1, 1e-9);
}

TEST(RampRate, RespectCapacityFlag) {
  const auto wide = two_bus(10.0, -5.0, 5.0, 10.0);
  RampOptions opts;
  opts.respect_capacity_in_ramp = true;
  EXPECT_NEAR(ramp_rate_at(wide, Eigen::VectorXd::Constant(1, 4.0), kNoLoad, nullptr, opts), 1.0, 1e-9);
}

TEST(RampRate, InfeasibleOperatingPoint) {
  try {
    ramp_rate_at(two_bus(3.0), Eigen::VectorXd::Constant(1, 4.0), kNoLoad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleOperatingPoint);
  }
}

Eigen::VectorXd random_feasible_point(std::mt19937_64& rng, const NetworkModel& net,
                                      const Eigen::VectorXd& l) {
  for (;;) {
    Eigen::VectorXd g(net.gen_count());
    for (int k = 0; k < net.gen_count(); ++k)
      g(k) = fixtures::uniform(rng, net.gmin()(k), net.gmax()(k));
    if (flow::feasible_flow_exists(net, {l.sum() - g.sum(), g, l}).feasible) return g;
  }
}

TEST(RampRate, TreeFormAgreesOnRandomTrees) {
  std::mt19937_64 rng(79);
  for (int t = 0; t < 50; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 8));
    const Eigen::VectorXd g = random_feasible_point(rng, rn.net, rn.load);
    EXPECT_NEAR(ramp_rate_at(rn.net, g, rn.load), ramp_rate_tree_form(rn.net, g, rn.load), 1e-7);
  }
}

TEST(RampRate, ShrinksWhenGenerationGrows) {
  std::mt19937_64 rng(83);
  for (int t = 0; t < 30; ++t) {
    const auto rn = random_network(rng, fixtures::random_cactus(rng, 8, t % 2));
    const Eigen::VectorXd g = random_feasible_point(rng, rn.net, rn.load);
    Eigen::VectorXd g2 = g;
    const int k = fixtures::uniform_int(rng, 0, rn.net.gen_count() - 1);
    g2(k) = fixtures::uniform(rng, g(k), rn.net.gmax()(k));
    if (!flow::feasible_flow_exists(rn.net, {rn.load.sum() - g2.sum(), g2, rn.load}).feasible) continue;
    EXPECT_LE(ramp_rate_at(rn.net, g2, rn.load), ramp_rate_at(rn.net, g, rn.load) + 1e-9);
  }
}

TEST(RampOfRegulation, TwoBusExamples) {
  const auto net = two_bus(3.0, -5.0, 5.0, 10.0);
  const NodeCost cost = NodeCost::of(net);
  EXPECT_NEAR(ramp_rate_of_regulation(net, cost, 0.0, kNoLoad), 3.0, 1e-9);
  EXPECT_NEAR(ramp_rate_of_regulation(net, cost, 3.0, kNoLoad), 6.0, 1e-9);
  EXPECT_THROW(ramp_rate_of_regulation(net, cost, 3.5, kNoLoad), Error);
}

TEST(RampOfRegulation, NonDecreasingOnRandomTrees) {
  std::mt19937_64 rng(89);
  for (int t = 0; t < 10; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 9));
    const NodeCost cost = NodeCost::of(rn.net);
    const auto cap = capacity_bounds_deterministic(rn.net, rn.load);
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      const double x = cap.up + (cap.down - cap.up) * i / 100.0;
      const double r = ramp_rate_of_regulation(rn.net, cost, x, rn.load);
      EXPECT_GE(r, prev - 1e-7) << "trial " << t << " x " << x;
      prev = r;
    }
  }
}

NetworkModel four_bus_star(double limit2, double gmax2, double limit3, double gmax3) {
  return NetworkModel(graph::DiGraph(4, {{1, 2}, {1, 3}, {1, 4}}),
                      {BusKind::Tie, BusKind::Gen, BusKind::Gen, BusKind::Load},
                      {{-1.0, gmax2, 0.0, 2.0, 1.0, 0.0}, {-1.0, gmax3, 0.0, 2.0, 1.0, 0.0}},
                      Eigen::Vector3d(limit2, limit3, 5.0), 1.0);
}

TEST(MinRamp, Examples) {
  EXPECT_FALSE(min_ramp_nonzero(two_bus(3.0), kNoLoad));
  EXPECT_TRUE(min_ramp_nonzero(two_bus(10.0), kNoLoad));
  const auto star = four_bus_star(3.0, 5.0, 10.0, 1.0);
  const Eigen::VectorXd l = Eigen::VectorXd::Constant(1, 1.0);
  EXPECT_TRUE(min_ramp_nonzero(star, l));
  // Oracle: ramp rate at the maximal up-regulation point.
  const auto cap = capacity_bounds_deterministic(star, l);
  const auto at_up = canonical_operating_point(star, NodeCost::of(star), cap.up, l);
  EXPECT_GT(ramp_rate_at(star, at_up.g, l), 0.0);
  const auto both_saturated = four_bus_star(3.0, 5.0, 2.0, 4.0);
  EXPECT_FALSE(min_ramp_nonzero(both_saturated, l));
}

TEST(Cost, TwoBusQuadratic) {
  const auto net = two_bus(3.0);
  const NodeCost cost = NodeCost::of(net);
  for (double x = -3.0; x <= 3.0; x += 0.25) EXPECT_NEAR(cost_of_regulation(net, cost, x, kNoLoad), x * x, 1e-9);
  EXPECT_EQ(cost_of_regulation(net, cost, 0.0, kNoLoad), 0.0);
  try {
    cost_of_regulation(net, cost, 3.5, kNoLoad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RegulationOutOfRange);
  }
}

// Tie(1) -> a(2) -> b(3), a(2) -> load(4). Line 2->3 saturates when b backs
// off far enough, giving a second cost regime.
NetworkModel kinked_net() {
  return NetworkModel(graph::DiGraph(4, {{1, 2}, {2, 3}, {2, 4}}),
                      {BusKind::Tie, BusKind::Gen, BusKind::Gen, BusKind::Load},
                      {{-2.0, 4.0, 1.0, 1.0, 1.0, 0.0}, {-2.0, 4.0, 1.0, 1.0, 0.5, 0.0}},
                      Eigen::Vector3d(6.0, 1.5, 4.0), 0.0);
}

TEST(Cost, KinkedNetworkMatchesGrid) {
  const auto net = kinked_net();
  const NodeCost cost = NodeCost::of(net);
  const Eigen::VectorXd l = Eigen::VectorXd::Constant(1, 2.0);
  const auto cap = capacity_bounds_deterministic(net, l);
  for (double x = cap.up; x <= cap.down + 1e-12; x += (cap.down - cap.up) / 12) {
    const double total = l.sum() - net.baseline_tie() - x;
    double best = 1e300;
    for (int i = 0; i <= 1200; ++i) {
      const double gb = -2.0 + 0.005 * i;
      const double ga = total - gb;
      if (ga < -2.0 - 1e-12 || ga > 4.0 + 1e-12) continue;
      Eigen::Vector2d g(ga, gb);
      const Eigen::VectorXd w = net.flows(g, l);
      if ((w.cwiseAbs() - net.flow_limit()).maxCoeff() > 1e-12) continue;
      best = std::min(best, cost.value(g));
    }
    EXPECT_NEAR(cost_of_regulation(net, cost, x, l), best, 1e-3) << x;
  }
}

TEST(CostWithRamp, TwoBusExamples) {
  const auto net = two_bus(3.0, -5.0, 5.0, 10.0);
  const NodeCost cost = NodeCost::of(net);
  EXPECT_NEAR(cost_with_ramp(net, cost, 1.0, 0.0, kNoLoad), 1.0, 1e-9);
  const auto slow = two_bus(3.0, -5.0, 5.0, 0.5);
  // Up regulation raises generation and is limited by the ramp.
  try {
    cost_with_ramp(slow, cost, -1.0, 0.0, kNoLoad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
  }
  // Down regulation lowers generation; the ramp bounds increases only.
  EXPECT_NEAR(cost_with_ramp(slow, cost, 1.0, 0.0, kNoLoad), 1.0, 1e-9);
}

// Oracle: some tree operating point at x_prev lies within ramp reach of the
// generation g_next, i.e. g_prev >= g_next - r with bounds, balance and limits.
bool predecessor_exists(const NetworkModel& net, const Eigen::VectorXd& g_next, double x_prev,
                        const Eigen::VectorXd& l) {
  const int ng = net.gen_count();
  opt::ConvexProgram p(ng);
  for (int k = 0; k < ng; ++k)
    p.set_bounds(k, std::max(net.gmin()(k), g_next(k) - net.ramp()(k)), net.gmax()(k));
  if ((p.lower().array() > p.upper().array() + 1e-12).any()) return false;
  const double tie = net.baseline_tie() + x_prev;
  // Flows are P_ref' times the non-tie injections; generation enters linearly.
  const Eigen::MatrixXd pt = net.path().transpose();
  const Eigen::VectorXd v0 = net.injection_vector({tie, Eigen::VectorXd::Zero(ng), l});
  const Eigen::VectorXd w0 = pt * v0.tail(net.bus_count() - 1);
  Eigen::MatrixXd dw(net.line_count(), ng);
  for (int k = 0; k < ng; ++k) {
    const Eigen::VectorXd vk =
        net.injection_vector({0.0, Eigen::VectorXd::Unit(ng, k), Eigen::VectorXd::Zero(l.size())});
    dw.col(k) = pt * vk.tail(net.bus_count() - 1);
  }
  p.add_equality(Eigen::RowVectorXd::Ones(ng), l.sum() - tie);
  for (int j = 0; j < net.line_count(); ++j) {
    p.add_inequality(dw.row(j), net.flow_limit()(j) - w0(j));
    p.add_inequality(-dw.row(j), net.flow_limit()(j) + w0(j));
  }
  return opt::solve(p).status == opt::Status::Optimal;
}

TEST(CostWithRamp, MatchesCostExactlyWhenPredecessorReachable) {
  std::mt19937_64 rng(97);
  int equal = 0, strict = 0;
  for (int t = 0; t < 20; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 7));
    const NodeCost cost = NodeCost::of(rn.net);
    const auto cap = capacity_bounds_deterministic(rn.net, rn.load);
    for (int k = 0; k < 5; ++k) {
      const double xp = fixtures::uniform(rng, cap.up, cap.down);
      const double r = ramp_rate_of_regulation(rn.net, cost, xp, rn.load);
      const double x = std::clamp(xp + fixtures::uniform(rng, -r, r), cap.up, cap.down);
      const double f = cost_of_regulation(rn.net, cost, x, rn.load);
      const double fr = cost_with_ramp(rn.net, cost, x, xp, rn.load);
      EXPECT_GE(fr, f - 1e-7 * (1.0 + f));
      const Eigen::VectorXd g_next = canonical_operating_point(rn.net, cost, x, rn.load).g;
      if (predecessor_exists(rn.net, g_next, xp, rn.load)) {
        EXPECT_NEAR(fr, f, 1e-6 * (1.0 + f));
        ++equal;
      } else {
        EXPECT_GT(fr, f + 1e-7);
        ++strict;
      }
    }
  }
  EXPECT_EQ(equal + strict, 100);
  EXPECT_GT(equal, 0);
}

// Two generators at the tie: a ramps slowly, b is held near its lower bound.
// |x - x_prev| = 1 <= R(0) = 10.1 (ramp limits only), yet the unique minimizer (0.5, 0.5) at
// x = -1 needs g_a >= 0.4 and g_b >= -0.2 at x_prev = 0, which sums above 0.
TEST(CostWithRamp, RampRateBoundDoesNotImplyEquality) {
  const NetworkModel net(graph::DiGraph(3, {{1, 2}, {1, 3}}), {BusKind::Tie, BusKind::Gen, BusKind::Gen},
                         {{-1.0, 1.0, 0.0, 0.1, 1.0, 0.0}, {-0.2, 1.0, 0.0, 10.0, 1.0, 0.0}},
                         Eigen::Vector2d(10.0, 10.0), 0.0);
  const NodeCost cost = NodeCost::of(net);
  EXPECT_NEAR(ramp_rate_of_regulation(net, cost, 0.0, kNoLoad), 10.1, 1e-9);
  EXPECT_NEAR(cost_of_regulation(net, cost, -1.0, kNoLoad), 0.5, 1e-9);
  // Best reachable: g_a <= 0.2 + 0.1 at x_prev = 0, so (0.3, 0.7).
  EXPECT_NEAR(cost_with_ramp(net, cost, -1.0, 0.0, kNoLoad), 0.58, 1e-9);
}

TEST(Cost, ConvexOnRandomNetworks) {
  std::mt19937_64 rng(101);
  for (int t = 0; t < 10; ++t) {
    const auto rn = random_network(rng, fixtures::random_cactus(rng, 8, t % 2), 0.4, 0.5, 0.5);
    const NodeCost cost = NodeCost::of(rn.net);
    const auto cap = capacity_bounds_deterministic(rn.net, rn.load);
    for (int k = 0; k < 20; ++k) {
      const double a = fixtures::uniform(rng, cap.up, cap.down);
      const double b = fixtures::uniform(rng, cap.up, cap.down);
      const double mid = cost_of_regulation(rn.net, cost, 0.5 * (a + b), rn.load);
      const double avg = 0.5 * (cost_of_regulation(rn.net, cost, a, rn.load) +
                                cost_of_regulation(rn.net, cost, b, rn.load));
      EXPECT_LE(mid, avg + 1e-6);
    }
  }
}

TEST(Abstraction, TwoBusInterpolant) {
  const auto net = two_bus(3.0);
  const auto a = build_abstraction(net, LoadDistribution::constant(kNoLoad), 0.1, 0.05);
  EXPECT_NEAR(a.up, -3.0, 1e-9);
  EXPECT_NEAR(a.down, 3.0, 1e-9);
  for (double x = -2.99; x < 3.0; x += 0.0173) EXPECT_NEAR(a.f(x), x * x, 1e-3);
  const auto coarse = build_abstraction(net, LoadDistribution::constant(kNoLoad), 0.1, 0.05, {3, {}});
  ASSERT_EQ(coarse.cost.knots().size(), 3u);
  EXPECT_NEAR(coarse.f(-3.0), 9.0, 1e-9);
  EXPECT_NEAR(coarse.f(0.0), 0.0, 1e-9);
  EXPECT_NEAR(coarse.f(3.0), 9.0, 1e-9);
  EXPECT_NEAR(coarse.gradient(0.0), 0.0, 1e-9);
  EXPECT_NEAR(coarse.gradient(1.0), 3.0, 1e-9);
}

TEST(Abstraction, SlopesNonDecreasingAndRampMonotone) {
  std::mt19937_64 rng(103);
  for (int t = 0; t < 5; ++t) {
    const auto rn = random_network(rng, random_tree(rng, 9));
    const auto a = build_abstraction(rn.net, LoadDistribution::constant(rn.load), 0.1, 0.05, {21, {}});
    EXPECT_LE(a.up, 0.0);
    EXPECT_GE(a.down, 0.0);
    const auto& xs = a.cost.knots();
    for (std::size_t i = 1; i + 1 < xs.size(); ++i) EXPECT_GE(a.cost.slope(i), a.cost.slope(i - 1) - 1e-9);
    for (std::size_t i = 1; i < xs.size(); ++i)
      EXPECT_GE(a.ramp.values()[i], a.ramp.values()[i - 1] - 1e-7);
    for (double r : a.ramp.values()) {
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, rn.net.ramp().sum() + 1e-9);
    }
    EXPECT_NEAR(a.f(0.0), 0.0, 1e-9);  // g0 minimizes its own fiber
  }
}

TEST(Abstraction, GridValidation) {
  EXPECT_THROW(regulation_grid(-1.0, 1.0, 4), Error);
  EXPECT_THROW(regulation_grid(-1.0, 1.0, 1), Error);
  const auto xs = regulation_grid(0.0, 2.0, 5);
  EXPECT_EQ(xs, (std::vector<double>{0.0, 1.0, 2.0}));
}

TEST(PiecewiseLinearInterp, SlopesAndExtension) {
  const PiecewiseLinear p({-1.0, 0.0, 2.0}, {1.0, 0.0, 4.0});
  EXPECT_DOUBLE_EQ(p(-2.0), 2.0);
  EXPECT_DOUBLE_EQ(p(1.0), 2.0);
  EXPECT_DOUBLE_EQ(p(3.0), 6.0);
  EXPECT_DOUBLE_EQ(p.left_slope(0.0), -1.0);
  EXPECT_DOUBLE_EQ(p.right_slope(0.0), 2.0);
  EXPECT_DOUBLE_EQ(p.subgradient(0.0), 0.5);
  EXPECT_DOUBLE_EQ(p.subgradient(1.0), 2.0);
}

}  // namespace
