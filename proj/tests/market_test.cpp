#include <gtest/gtest.h>

#include <random>

#include "regnet/market.hpp"
#include "test_support.hpp"

namespace {

using namespace regnet;
using namespace regnet::market;
using fixtures::two_bus;

RegulationBid bid(std::string id, double cap, double price, double mileage = 1.0) {
  RegulationBid b;
  b.id = std::move(id);
  b.capacity = cap;
  b.capacity_price = price;
  b.mileage = mileage;
  return b;
}

abs::MicrogridAbstraction two_bus_abstraction(double limit) {
  return abs::build_abstraction(two_bus(limit, -5.0, 5.0, 10.0), abs::LoadDistribution::constant(Eigen::VectorXd(0)),
                                0.5, 1.0, {11, {}});
}

TEST(MakeBid, TwoBusGeneratorBinds) {
  const auto net = two_bus(10.0, -5.0, 5.0, 10.0);
  const auto b = make_bid(two_bus_abstraction(10.0), abs::NodeCost::of(net), 1.0);
  EXPECT_NEAR(b.capacity, 5.0, 1e-9);
  EXPECT_NEAR(b.mileage, 5.0, 1e-9);
  EXPECT_NEAR(b.capacity_price, 5.0, 1e-9);
}

TEST(MakeBid, SaturatedLineGivesZeroMileage) {
  const auto net = two_bus(3.0, -5.0, 5.0, 10.0);
  const auto a = two_bus_abstraction(3.0);
  const auto b = make_bid(a, abs::NodeCost::of(net), 1.0);
  EXPECT_NEAR(b.capacity, 3.0, 1e-9);
  EXPECT_NEAR(b.mileage, 0.0, 1e-9);
  EXPECT_NEAR(b.capacity_price, 3.0, 1e-9);
  EXPECT_FALSE(abs::min_ramp_nonzero(net, Eigen::VectorXd(0)));
  const auto d = make_bid(a, abs::NodeCost::of(net), 1.0, Side::Down);
  EXPECT_NEAR(d.capacity, 3.0, 1e-9);
}

TEST(MakeBid, PeriodConstantScalesMileageOnly) {
  const auto net = two_bus(10.0, -5.0, 5.0, 10.0);
  const auto a = two_bus_abstraction(10.0);
  const auto b1 = make_bid(a, abs::NodeCost::of(net), 1.0);
  const auto b2 = make_bid(a, abs::NodeCost::of(net), 2.0);
  EXPECT_DOUBLE_EQ(b2.mileage, 2.0 * b1.mileage);
  EXPECT_DOUBLE_EQ(b2.capacity, b1.capacity);
  EXPECT_DOUBLE_EQ(b2.capacity_price, b1.capacity_price);
}

TEST(MakeBid, ZeroCapacity) {
  abs::MicrogridAbstraction a;
  a.g_up = Eigen::VectorXd::Zero(1);
  const auto net = two_bus(10.0);
  try {
    make_bid(a, abs::NodeCost::of(net), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroCapacity);
  }
}

TEST(ClearMarket, Examples) {
  const auto a = clear_market({bid("a", 3, 1), bid("b", 5, 2, 4.0)}, 6.0);
  EXPECT_DOUBLE_EQ(a.cleared_capacity[0], 3.0);
  EXPECT_DOUBLE_EQ(a.cleared_capacity[1], 3.0);
  EXPECT_DOUBLE_EQ(a.clearing_price, 2.0);
  EXPECT_DOUBLE_EQ(a.cleared_mileage[1], 4.0 * 3.0 / 5.0);

  const auto single = clear_market({bid("a", 10, 1.5)}, 4.0);
  EXPECT_DOUBLE_EQ(single.cleared_capacity[0], 4.0);
  EXPECT_DOUBLE_EQ(single.clearing_price, 1.5);

  const auto all = clear_market({bid("a", 2, 3), bid("b", 1, 1), bid("c", 4, 2)}, 7.0);
  EXPECT_DOUBLE_EQ(all.total_capacity(), 7.0);
  EXPECT_DOUBLE_EQ(all.clearing_price, 3.0);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_GT(all.cleared_capacity[i], 0.0);
}

TEST(ClearMarket, TiesBrokenById) {
  const auto a = clear_market({bid("z", 3, 1), bid("a", 3, 1)}, 4.0);
  EXPECT_DOUBLE_EQ(a.cleared_capacity[1], 3.0);
  EXPECT_DOUBLE_EQ(a.cleared_capacity[0], 1.0);
}

TEST(ClearMarket, InsufficientCapacity) {
  try {
    clear_market({bid("a", 3, 1), bid("b", 2, 1)}, 6.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientCapacity);
  }
}

// Oracle: every award on a 0.1 kW grid covering the requirement, paid the
// highest price among the awarded bids.
double cheapest_uniform_payment(const std::vector<RegulationBid>& bids, int req_tenths) {
  const std::size_t n = bids.size();
  std::vector<int> cap(n), a(n, 0);
  for (std::size_t i = 0; i < n; ++i) cap[i] = static_cast<int>(std::lround(bids[i].capacity * 10));
  double best = 1e300;
  for (;;) {
    int sum = 0;
    double price = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += a[i];
      if (a[i] > 0) price = std::max(price, bids[i].capacity_price);
    }
    if (sum >= req_tenths) best = std::min(best, price * sum / 10.0);
    std::size_t i = 0;
    while (i < n && a[i] == cap[i]) a[i++] = 0;
    if (i == n) break;
    ++a[i];
  }
  return best;
}

TEST(ClearMarket, MinimizesUniformPaymentAgainstEnumeration) {
  std::mt19937_64 rng(103);
  for (int t = 0; t < 40; ++t) {
    const int n = fixtures::uniform_int(rng, 1, 4);
    std::vector<RegulationBid> bids;
    int total = 0;
    for (int i = 0; i < n; ++i) {
      const int c = fixtures::uniform_int(rng, 1, 25);
      total += c;
      bids.push_back(bid(std::string(1, static_cast<char>('a' + i)), c / 10.0,
                         fixtures::uniform_int(rng, 1, 9) / 2.0));
    }
    const int req = fixtures::uniform_int(rng, 1, total);
    const auto award = clear_market(bids, req / 10.0);
    EXPECT_NEAR(award.clearing_price * award.total_capacity(), cheapest_uniform_payment(bids, req), 1e-9);
    EXPECT_NEAR(award.total_capacity(), req / 10.0, 1e-12);
    for (std::size_t i = 0; i < bids.size(); ++i) EXPECT_LE(award.cleared_capacity[i], bids[i].capacity);
  }
}

MarketAward award(std::vector<double> cap, std::vector<double> mileage) {
  MarketAward a;
  a.cleared_capacity = std::move(cap);
  a.cleared_mileage = std::move(mileage);
  a.id.assign(a.cleared_capacity.size(), "");
  return a;
}

TEST(CurrentPractice, Examples) {
  const auto ample = current_practice_allocation(award({10, 10}, {2, 1}), 3.0);
  EXPECT_DOUBLE_EQ(ample.setpoint[0], 2.0);
  EXPECT_DOUBLE_EQ(ample.setpoint[1], 1.0);

  const auto capped = current_practice_allocation(award({1.5, 2}, {2, 1}), 3.0);
  EXPECT_DOUBLE_EQ(capped.setpoint[0], 1.5);
  EXPECT_DOUBLE_EQ(capped.setpoint[1], 1.5);
  EXPECT_DOUBLE_EQ(capped.unallocated, 0.0);

  const auto sat = current_practice_allocation(award({1, 1}, {2, 1}), 3.0);
  EXPECT_DOUBLE_EQ(sat.setpoint[0], 1.0);
  EXPECT_DOUBLE_EQ(sat.setpoint[1], 1.0);
  EXPECT_DOUBLE_EQ(sat.unallocated, 1.0);

  const auto up = current_practice_allocation(award({1.5, 2}, {2, 1}), -3.0);
  EXPECT_DOUBLE_EQ(up.setpoint[0], -1.5);
  EXPECT_DOUBLE_EQ(up.setpoint[1], -1.5);
}

TEST(CurrentPractice, AllMileagesZero) {
  try {
    current_practice_allocation(award({1, 1}, {0, 0}), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllMileagesZero);
  }
}

// Oracle for two resources: the closed-form redistribution.
TEST(CurrentPractice, TwoResourceClosedForm) {
  std::mt19937_64 rng(107);
  for (int t = 0; t < 200; ++t) {
    const double m1 = fixtures::uniform(rng, 0.1, 3), m2 = fixtures::uniform(rng, 0.1, 3);
    const double c1 = fixtures::uniform(rng, 0.1, 3), c2 = fixtures::uniform(rng, 0.1, 3);
    const double total = fixtures::uniform(rng, 0.0, 7.0);
    double s1 = total * m1 / (m1 + m2), s2 = total * m2 / (m1 + m2);
    if (s1 > c1 && s2 > c2) {
      s1 = c1;
      s2 = c2;
    } else if (s1 > c1) {
      s1 = c1;
      s2 = std::min(total - c1, c2);
    } else if (s2 > c2) {
      s2 = c2;
      s1 = std::min(total - c2, c1);
    }
    const auto a = current_practice_allocation(award({c1, c2}, {m1, m2}), total);
    EXPECT_NEAR(a.setpoint[0], s1, 1e-12);
    EXPECT_NEAR(a.setpoint[1], s2, 1e-12);
  }
}

TEST(CurrentPractice, ConservesTotalAndRespectsCaps) {
  std::mt19937_64 rng(109);
  for (int t = 0; t < 200; ++t) {
    const int n = fixtures::uniform_int(rng, 1, 8);
    std::vector<double> cap(n), m(n);
    for (int i = 0; i < n; ++i) {
      cap[i] = fixtures::uniform(rng, 0.0, 3.0);
      m[i] = fixtures::uniform(rng, 0.0, 1.0) < 0.2 ? 0.0 : fixtures::uniform(rng, 0.1, 2.0);
    }
    m[0] = 1.0;
    const double total = fixtures::uniform(rng, -10.0, 10.0);
    const auto a = current_practice_allocation(award(cap, m), total);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      sum += a.setpoint[i];
      EXPECT_LE(std::abs(a.setpoint[i]), cap[i] + 1e-15);
    }
    EXPECT_NEAR(sum + a.unallocated, total, 1e-12);
  }
}

TEST(CurrentPractice, HomogeneousWithoutCaps) {
  std::mt19937_64 rng(113);
  for (int t = 0; t < 100; ++t) {
    const int n = fixtures::uniform_int(rng, 1, 6);
    std::vector<double> cap(n, 1e6), m(n);
    for (int i = 0; i < n; ++i) m[i] = fixtures::uniform(rng, 0.1, 2.0);
    const double total = fixtures::uniform(rng, -5.0, 5.0), lambda = fixtures::uniform(rng, 0.1, 4.0);
    const auto a = current_practice_allocation(award(cap, m), total);
    const auto b = current_practice_allocation(award(cap, m), lambda * total);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(b.setpoint[i], lambda * a.setpoint[i], 1e-12);
  }
}

}  // namespace
