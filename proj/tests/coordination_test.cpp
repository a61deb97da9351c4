#include <gtest/gtest.h>

#include <random>

#include "regnet/coordination.hpp"
#include "test_support.hpp"

namespace {

using namespace regnet;
using namespace regnet::coord;

constexpr double kWide = 1e6;

CoordinationProblem<QuadraticCost> pair_problem(std::vector<QuadraticCost> cost, double x_r,
                                                std::vector<Box> box = {{-kWide, kWide}, {-kWide, kWide}}) {
  return make_problem(std::move(cost), std::move(box), x_r, graph::undirected_ring(2));
}

TEST(Dac, PairAveragesConstantInputs) {
  const Eigen::MatrixXd L = graph::laplacian(graph::undirected_ring(2));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2), v = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd u(Eigen::Vector2d(0.0, 2.0)), du = Eigen::VectorXd::Zero(2);
  for (int k = 0; k < 100000; ++k) std::tie(z, v) = dac_step(z, v, u, du, L, 1.0, 1.0, 1e-3);
  EXPECT_NEAR(z(0), 1.0, 1e-6);
  EXPECT_NEAR(z(1), 1.0, 1e-6);
  EXPECT_NEAR(v.sum(), 0.0, 1e-12);
}

TEST(Dac, ConsensusIsFixedPoint) {
  const Eigen::MatrixXd L = graph::laplacian(graph::ring_with_chords(12));
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(12, 3.5);
  const auto [z, v] = dac_step(c, Eigen::VectorXd::Zero(12), c, Eigen::VectorXd::Zero(12), L, 400, 400, 1e-3);
  EXPECT_EQ(z, c);
  EXPECT_EQ(v, Eigen::VectorXd::Zero(12));
}

TEST(Dac, TracksCommonRamp) {
  const Eigen::MatrixXd L = graph::laplacian(graph::undirected_ring(5));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(5), v = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd offset = (Eigen::VectorXd(5) << 1, -2, 0.5, 3, -2.5).finished();
  double worst_late = 0.0, worst = 0.0;
  const double dt = 1e-3;
  for (int k = 0; k < 1000000; ++k) {
    const double t = k * dt;
    const Eigen::VectorXd u = offset.array() + t;
    std::tie(z, v) = dac_step(z, v, u, Eigen::VectorXd::Ones(5), L, 1.0, 1.0, dt);
    const double err = (z.array() - (t + dt)).abs().maxCoeff();
    worst = std::max(worst, err);
    if (k > 900000) worst_late = std::max(worst_late, err);
  }
  EXPECT_LT(worst, 10.0);
  EXPECT_LT(worst_late, 1e-6);
}

TEST(Penalty, Examples) {
  const auto p = pair_problem({{1, 0}, {1, 0}}, 3.0);
  auto pp = p;
  pp.gains.mu = 10.0;
  EXPECT_DOUBLE_EQ(penalty_value(Eigen::Vector2d(1, 1), pp), 12.0);
  EXPECT_DOUBLE_EQ(penalty_value(Eigen::Vector2d(1, 2), pp), 5.0);
  auto boxed = pair_problem({{1, 0}, {1, 0}}, 3.0, {{0, 1.5}, {0, 10}});
  boxed.gains.mu2 = 11.0;
  EXPECT_DOUBLE_EQ(penalty_value(Eigen::Vector2d(2, 1), boxed), 5.0 + 5.5);
}

TEST(Penalty, GradientSignsPushIntoBox) {
  const auto p = pair_problem({{0, 0}, {0, 0}}, 0.0, {{0, 1}, {0, 1}});
  const Eigen::VectorXd g = box_penalized_gradient(Eigen::Vector2d(2, -1), p);
  EXPECT_DOUBLE_EQ(g(0), p.gains.mu2);
  EXPECT_DOUBLE_EQ(g(1), -p.gains.mu2);
  EXPECT_DOUBLE_EQ(box_penalized_gradient(Eigen::Vector2d(1, 0), p)(0), 0.0);
}

TEST(EffectiveBox, IntersectsCapacityAndRamp) {
  const Box b = effective_box(-5, 4, 1, 2);
  EXPECT_DOUBLE_EQ(b.lo, -1);
  EXPECT_DOUBLE_EQ(b.hi, 3);
  const Box c = effective_box(-5, 4, 8, 2);
  EXPECT_DOUBLE_EQ(c.lo, 6);
  EXPECT_DOUBLE_EQ(c.hi, 6);
}

TEST(Oracle, Examples) {
  const auto feasible = pair_problem({{1, 0}, {2, 0}}, 3.0);
  const Eigen::VectorXd x = centralized_oracle(feasible);
  EXPECT_NEAR(x(0), 2.0, 1e-7);
  EXPECT_NEAR(x(1), 1.0, 1e-7);
  EXPECT_NEAR(2 * x(0), 4 * x(1), 1e-6);

  const auto tight = pair_problem({{1, 0}, {1, 0}}, 2.0, {{0, 0.5}, {0, 0.5}});
  const Eigen::VectorXd y = centralized_oracle(tight);
  EXPECT_NEAR(y(0), 0.5, 1e-9);
  EXPECT_NEAR(y(1), 0.5, 1e-9);
}

TEST(Oracle, InvariantToPenaltyAboveThreshold) {
  std::mt19937_64 rng(127);
  for (int t = 0; t < 20; ++t) {
    const int n = fixtures::uniform_int(rng, 2, 6);
    std::vector<QuadraticCost> cost;
    std::vector<Box> box;
    double cap = 0.0;
    for (int i = 0; i < n; ++i) {
      cost.push_back({fixtures::uniform(rng, 0.5, 2), fixtures::uniform(rng, -1, 1)});
      box.push_back({-fixtures::uniform(rng, 0, 3), fixtures::uniform(rng, 0.5, 3)});
      cap += box.back().hi;
    }
    auto p = make_problem(cost, box, fixtures::uniform(rng, 0, 1.2 * cap), graph::undirected_ring(n));
    p.gains.mu = penalty_threshold(p);
    const Eigen::VectorXd a = centralized_oracle(p);
    p.gains.mu *= 10.0;
    const Eigen::VectorXd b = centralized_oracle(p);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6);
  }
}

// Oracle: min f(x) s.t. 1'x = x_r and the boxes, solved with an equality row.
Eigen::VectorXd equality_constrained(const CoordinationProblem<QuadraticCost>& p) {
  opt::ConvexProgram prog(p.size());
  for (int i = 0; i < p.size(); ++i) {
    prog.quadratic()(i, i) = 2 * p.cost[i].a;
    prog.linear()(i) = p.cost[i].b;
    prog.set_bounds(i, p.box[i].lo, p.box[i].hi);
  }
  prog.add_equality(Eigen::RowVectorXd::Ones(p.size()), p.x_r);
  return opt::solve(prog).x;
}

TEST(Oracle, ExactPenaltyMatchesEqualityConstrained) {
  std::mt19937_64 rng(131);
  for (int t = 0; t < 50; ++t) {
    const int n = fixtures::uniform_int(rng, 2, 6);
    std::vector<QuadraticCost> cost;
    std::vector<Box> box;
    double lo = 0.0, hi = 0.0;
    for (int i = 0; i < n; ++i) {
      cost.push_back({fixtures::uniform(rng, 0.5, 2), fixtures::uniform(rng, -1, 1)});
      box.push_back({-fixtures::uniform(rng, 0, 3), fixtures::uniform(rng, 0.5, 3)});
      lo += box.back().lo;
      hi += box.back().hi;
    }
    auto p = make_problem(cost, box, fixtures::uniform(rng, std::max(lo, 0.0), hi), graph::undirected_ring(n));
    p.gains.mu = penalty_threshold(p);
    EXPECT_LE((centralized_oracle(p) - equality_constrained(p)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Gdac, SingleAggregatorClipsImmediately) {
  const auto p = make_problem(std::vector<QuadraticCost>{{1, 0}}, {{0, 1.5}}, 2.0, graph::DiGraph(1, {}));
  const auto r = solve_instant(p);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.steps, 0);
  EXPECT_DOUBLE_EQ(r.x(0), 1.5);
}

TEST(Gdac, RejectsUnbalancedGraph) {
  try {
    make_problem(std::vector<QuadraticCost>{{1, 0}, {1, 0}, {1, 0}}, {{0, 1}, {0, 1}, {0, 1}}, 1.0,
                 graph::DiGraph(3, {{1, 2}, {2, 3}, {3, 1}, {1, 3}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GraphHypothesisViolated);
  }
}

// Gains scaled to unit-size problems; the chattering step mu dt stays small.
constexpr Gains kSmallGains{10.0, 11.0, 10.0, 10.0};

CoordinationProblem<QuadraticCost> small_pair(std::vector<QuadraticCost> cost, double x_r,
                                              std::vector<Box> box = {{-kWide, kWide}, {-kWide, kWide}}) {
  return make_problem(std::move(cost), std::move(box), x_r, graph::undirected_ring(2), kSmallGains);
}

// Limits satisfy 1'x = x_r and 0 <= f_i'(x_i) <= mu, the stationarity
// condition of the dynamics.
TEST(Gdac, PairReachesStationarySet) {
  for (const auto& p : {small_pair({{1, 0}, {1, 0}}, 2.0), small_pair({{1, 0}, {2, 0}}, 3.0)}) {
    SolveOptions o;
    o.max_steps = 200000;
    const auto r = solve_instant(p, o);
    EXPECT_NEAR(r.x.sum(), p.x_r, 1e-2);
    for (int i = 0; i < 2; ++i) {
      const double g = p.cost[i].gradient(r.x(i));
      EXPECT_GE(g, -1e-2);
      EXPECT_LE(g, p.gains.mu + 1e-2);
    }
    EXPECT_LE(r.max_conservation_error, 1e-8 * (1 + std::abs(p.x_r)));
    EXPECT_LE(r.max_consensus_drift, 1e-9);
  }
}

// The prescribed start x = (x_r, 0), z = v = 0 already satisfies the
// stationarity condition for f = x^2, x_r = 2 (f_1' = 4, f_2' = 0, both in
// [0, mu]). With a fine step the iterates stay there instead of moving to
// the minimizer (1, 1).
TEST(Gdac, PrescribedStartIsStationaryForSymmetricPair) {
  const auto p = small_pair({{1, 0}, {1, 0}}, 2.0);
  const Eigen::VectorXd opt = centralized_oracle(p);
  EXPECT_NEAR(opt(0), 1.0, 1e-7);
  SolveOptions o;
  o.dt = 1e-4;
  o.max_steps = 100000;
  const auto r = solve_instant(p, o);
  EXPECT_NEAR(r.x(0), 2.0, 2e-2);
  EXPECT_NEAR(r.x(1), 0.0, 2e-2);
  EXPECT_GT((r.x - opt).cwiseAbs().maxCoeff(), 0.9);
}

TEST(Gdac, RampInfeasiblePair) {
  const auto p = small_pair({{1, 0}, {1, 0}}, 2.0, {{0, 0.5}, {0, 0.5}});
  SolveOptions o;
  o.dt = 1e-4;
  o.max_steps = 200000;
  const auto r = solve_instant(p, o);
  EXPECT_NEAR(r.x(0), 0.5, 1e-3);
  EXPECT_NEAR(r.x(1), 0.5, 1e-3);
  EXPECT_NEAR(p.x_r - r.x.sum(), 1.0, 2e-3);
  const Eigen::VectorXd oracle = centralized_oracle(p);
  EXPECT_NEAR(oracle(0), 0.5, 1e-9);
}

TEST(Gdac, NegativeRequirementIsMirrored) {
  const auto neg = small_pair({{1, 0}, {2, 0}}, -3.0);
  const auto pos = small_pair({{1, 0}, {2, 0}}, 3.0);
  const Eigen::VectorXd oracle = centralized_oracle(neg);
  EXPECT_NEAR(oracle(0), -2.0, 1e-7);
  EXPECT_NEAR(oracle(1), -1.0, 1e-7);
  EXPECT_DOUBLE_EQ(penalty_value(Eigen::Vector2d(-1, -1), neg), 3.0 + neg.gains.mu);
  SolveOptions o;
  o.max_steps = 20000;
  const auto a = solve_instant(neg, o);
  const auto b = solve_instant(pos, o);
  EXPECT_EQ(a.x, -b.x);
  EXPECT_EQ(a.steps, b.steps);
}

TEST(Gdac, ConservationAndConsensusDriftOnRandomRuns) {
  std::mt19937_64 rng(137);
  for (int t = 0; t < 10; ++t) {
    const int n = fixtures::uniform_int(rng, 3, 12);
    std::vector<QuadraticCost> cost;
    std::vector<Box> box;
    for (int i = 0; i < n; ++i) {
      cost.push_back({fixtures::uniform(rng, 0.5, 2), fixtures::uniform(rng, 0, 5)});
      box.push_back({-fixtures::uniform(rng, 0, 50), fixtures::uniform(rng, 10, 100)});
    }
    const double x_r = fixtures::uniform(rng, 10, 300);
    const auto p = make_problem(cost, box, x_r, t % 2 ? graph::directed_ring(n) : graph::ring_with_chords(n));
    SolveOptions o;
    o.max_steps = 20000;
    const auto r = solve_instant(p, o);
    EXPECT_LE(r.max_conservation_error, 1e-8 * (1 + x_r));
    EXPECT_LE(r.max_consensus_drift, 1e-9);
  }
}

TEST(Gdac, TraceColumns) {
  const auto p = small_pair({{1, 0}, {1, 0}}, 2.0);
  SolveOptions o;
  o.max_steps = 50;
  o.trace_stride = 10;
  const auto r = solve_instant(p, o);
  ASSERT_EQ(r.trace.size(), 6u);
  EXPECT_EQ(r.trace[0].step, 0);
  EXPECT_DOUBLE_EQ(r.trace[0].sum_x, 2.0);
  EXPECT_DOUBLE_EQ(r.trace[0].delta_x, 0.0);
  EXPECT_DOUBLE_EQ(r.trace[0].fp, 4.0);
}

}  // namespace
