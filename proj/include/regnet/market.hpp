#pragma once

// Regulation bids, uniform-price capacity clearing, and the proportional
// mileage-based disaggregation used by current practice.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "regnet/abstraction.hpp"
#include "regnet/errors.hpp"

namespace regnet::market {

enum class Side { Up, Down };

inline const char* to_string(Side s) { return s == Side::Up ? "up" : "down"; }

struct RegulationBid {
  std::string id;
  Side side = Side::Up;
  double capacity = 0.0;        // kW, > 0
  double mileage = 0.0;         // kW, k times the ramp rate at the capacity point
  double capacity_price = 0.0;  // $/kW
  double k = 1.0;
};

/// Capacity, mileage and capacity price of one microgrid for one market,
/// priced at the stored cost of the capacity operating point.
inline RegulationBid make_bid(const abs::MicrogridAbstraction& a, double k, Side side = Side::Up,
                              std::string id = {}) {
  if (!(k > 0.0) || !std::isfinite(k)) fail(ErrorCode::InvalidArgument, "period constant k must be positive");
  const bool up = side == Side::Up;
  const double capacity = up ? -a.up : a.down;
  if (!(capacity > 0.0))
    fail(ErrorCode::ZeroCapacity, std::string("no ") + to_string(side) + " regulation capacity to bid");
  RegulationBid b;
  b.id = std::move(id);
  b.side = side;
  b.k = k;
  b.capacity = capacity;
  b.mileage = k * std::max(0.0, up ? a.ramp_at_up : a.ramp_at_down);
  b.capacity_price = (up ? a.cost_at_up : a.cost_at_down) / capacity;
  return b;
}

/// As above, with the price taken from h at the capacity operating point.
inline RegulationBid make_bid(const abs::MicrogridAbstraction& a, const abs::NodeCost& cost, double k,
                              Side side = Side::Up, std::string id = {}) {
  RegulationBid b = make_bid(a, k, side, std::move(id));
  b.capacity_price = cost.value(side == Side::Up ? a.g_up : a.g_down) / b.capacity;
  return b;
}

/// Cleared quantities in bid order.
struct MarketAward {
  std::vector<std::string> id;
  std::vector<double> cleared_capacity;
  std::vector<double> cleared_mileage;
  double clearing_price = 0.0;

  std::size_t size() const noexcept { return cleared_capacity.size(); }
  double total_capacity() const {
    return std::accumulate(cleared_capacity.begin(), cleared_capacity.end(), 0.0);
  }
};

/// Merit-order clearing: cheapest capacity first (ties by id, then input
/// order), the marginal bid partially, every award paid the marginal price.
inline MarketAward clear_market(const std::vector<RegulationBid>& bids, double requirement) {
  if (!(requirement >= 0.0) || !std::isfinite(requirement))
    fail(ErrorCode::InvalidArgument, "capacity requirement must be a finite non-negative number");
  double offered = 0.0;
  for (const auto& b : bids) {
    if (!(b.capacity >= 0.0) || !(b.mileage >= 0.0) || !(b.capacity_price >= 0.0) ||
        !std::isfinite(b.capacity_price))
      fail(ErrorCode::InvalidArgument, "bid '" + b.id + "' has negative or non-finite fields");
    offered += b.capacity;
  }
  if (offered < requirement)
    fail(ErrorCode::InsufficientCapacity, "offered capacity " + std::to_string(offered) +
                                              " kW is below the requirement " + std::to_string(requirement) +
                                              " kW");
  std::vector<std::size_t> order(bids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (bids[a].capacity_price != bids[b].capacity_price) return bids[a].capacity_price < bids[b].capacity_price;
    return bids[a].id < bids[b].id;
  });

  MarketAward award;
  award.cleared_capacity.assign(bids.size(), 0.0);
  award.cleared_mileage.assign(bids.size(), 0.0);
  for (const auto& b : bids) award.id.push_back(b.id);
  double remaining = requirement;
  for (std::size_t i : order) {
    if (remaining <= 0.0) break;
    const auto& b = bids[i];
    if (b.capacity <= 0.0) continue;
    const double take = std::min(b.capacity, remaining);
    award.cleared_capacity[i] = take;
    award.cleared_mileage[i] = b.mileage * (take / b.capacity);
    award.clearing_price = b.capacity_price;
    remaining -= take;
  }
  return award;
}

struct Allocation {
  std::vector<double> setpoint;
  double unallocated = 0.0;  // total - sum(setpoint)
};

/// Splits `total` in proportion to `mileage`. Setpoints outside their box
/// [lower_i, upper_i] (lower_i <= 0 <= upper_i) are clamped and the overshoot
/// goes to the unclamped resources in proportion to their mileages, at most
/// one round per resource. What no resource can absorb is left unallocated.
inline Allocation proportional_allocation(const std::vector<double>& mileage, const std::vector<double>& lower,
                                          const std::vector<double>& upper, double total) {
  const std::size_t n = mileage.size();
  if (n == 0 || lower.size() != n || upper.size() != n)
    fail(ErrorCode::InvalidArgument, "allocation needs one mileage and one box per resource");
  for (std::size_t i = 0; i < n; ++i)
    if (!(mileage[i] >= 0.0) || !(lower[i] <= 0.0) || !(upper[i] >= 0.0))
      fail(ErrorCode::InvalidArgument, "mileages must be non-negative and boxes must contain zero");
  if (std::all_of(mileage.begin(), mileage.end(), [](double m) { return m == 0.0; }))
    fail(ErrorCode::AllMileagesZero, "every cleared mileage is zero");

  Allocation out;
  out.setpoint.assign(n, 0.0);
  std::vector<bool> capped(n, false);
  for (std::size_t round = 0; round <= n; ++round) {
    double fixed = 0.0, weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (capped[i]) fixed += out.setpoint[i];
      else weight += mileage[i];
    }
    const double remaining = total - fixed;
    if (weight <= 0.0) break;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (capped[i]) continue;
      const double s = remaining * mileage[i] / weight;
      out.setpoint[i] = s;
      if (s > upper[i] || s < lower[i]) {
        out.setpoint[i] = std::clamp(s, lower[i], upper[i]);
        capped[i] = true;
        any = true;
      }
    }
    if (!any) break;
  }
  out.unallocated = total - std::accumulate(out.setpoint.begin(), out.setpoint.end(), 0.0);
  return out;
}

/// Current practice: proportional to cleared mileage, capped at the cleared
/// capacity in magnitude.
inline Allocation current_practice_allocation(const MarketAward& award, double agc_total) {
  std::vector<double> lower(award.size()), upper(award.size());
  for (std::size_t i = 0; i < award.size(); ++i) {
    upper[i] = award.cleared_capacity[i];
    lower[i] = -award.cleared_capacity[i];
  }
  return proportional_allocation(award.cleared_mileage, lower, upper, agc_total);
}

}  // namespace regnet::market
