#pragma once

// End-to-end tracking experiment: regulation signal, synthetic fleets,
// market clearing, per-instant disaggregation by the distributed dynamics or
// by current practice, and cost/mileage bookkeeping.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "regnet/abstraction.hpp"
#include "regnet/coordination.hpp"
#include "regnet/errors.hpp"
#include "regnet/io.hpp"
#include "regnet/market.hpp"
#include "regnet/netgraph.hpp"
#include "regnet/powerflow.hpp"

namespace regnet::harness {

// --- signal ----------------------------------------------------------------

/// Normalized samples in [-1, 1]; x_r = scale * value.
struct RegulationSignal {
  std::vector<double> t;
  std::vector<double> value;
  double scale = 1.0;

  std::size_t size() const noexcept { return t.size(); }
  double x_r(std::size_t i) const { return scale * value.at(i); }
};

inline RegulationSignal parse_signal(const std::string& text, double scale, const std::string& where = "signal") {
  if (!std::isfinite(scale)) fail(ErrorCode::InvalidArgument, "signal scale must be finite");
  const io::Table table = io::parse_csv(text, where);
  const int ct = table.column("t"), cv = table.column("value");
  RegulationSignal s;
  s.scale = scale;
  for (const auto& row : table.rows) {
    const double t = row[static_cast<std::size_t>(ct)], v = row[static_cast<std::size_t>(cv)];
    if (!s.t.empty() && !(t > s.t.back())) fail(ErrorCode::ParseError, where + ": t must increase strictly");
    if (!(std::abs(v) <= 1.0))
      fail(ErrorCode::ValueOutOfRange, where + ": |value| = " + io::fmt(std::abs(v)) + " exceeds 1");
    s.t.push_back(t);
    s.value.push_back(v);
  }
  return s;
}

inline RegulationSignal load_signal(const std::filesystem::path& path, double scale) {
  return parse_signal(io::read_text(path), scale, path.string());
}

// --- synthetic fleet -------------------------------------------------------

struct FleetMember {
  flow::NetworkModel net;
  abs::LoadDistribution loads;
  int group = 0;
  std::optional<double> eps_prime;  // overrides the scenario's confidence levels
  std::optional<double> eps;
};

struct FleetSpec {
  int buses = 48;
  int generators = 10;
  double variance_scale = 0.25;  // load variance = variance_scale * mean^2
  double quad_lo = 0.002;        // $/kW^2, generator cost curvature range
  double quad_hi = 0.01;
};

/// Load scenario of the k-th member of a group, cycling through constant
/// load, variable load at (0.1, 4.2e-5) and variable load at (0.2, 8.4e-5).
struct MemberScenario {
  bool variable = false;
  double eps_prime = 0.1;
  double eps = 4.2e-5;
};

inline MemberScenario member_scenario(int k) {
  switch (k % 3) {
    case 0: return {false, 0.1, 4.2e-5};
    case 1: return {true, 0.1, 4.2e-5};
    default: return {true, 0.2, 8.4e-5};
  }
}

namespace detail {

// Random tree in which bus v attaches to one of the six buses before it.
inline graph::DiGraph group_tree(std::mt19937_64& rng, int n) {
  std::vector<graph::Edge> edges;
  for (int v = 2; v <= n; ++v) {
    const int u = std::uniform_int_distribution<int>(std::max(1, v - 6), v - 1)(rng);
    if (rng() % 2) edges.push_back({u, v});
    else edges.push_back({v, u});
  }
  return graph::DiGraph(n, std::move(edges));
}

struct GroupNetwork {
  flow::NetworkModel net;
  Eigen::VectorXd mean_load;
};

inline std::optional<GroupNetwork> try_group(std::mt19937_64& rng, const FleetSpec& spec, const std::string& name) {
  std::vector<flow::BusKind> kinds(static_cast<std::size_t>(spec.buses), flow::BusKind::Load);
  kinds[0] = flow::BusKind::Tie;
  std::vector<int> others(static_cast<std::size_t>(spec.buses - 1));
  for (int i = 0; i < spec.buses - 1; ++i) others[static_cast<std::size_t>(i)] = i + 1;
  std::shuffle(others.begin(), others.end(), rng);
  for (int k = 0; k < spec.generators; ++k) kinds[static_cast<std::size_t>(others[static_cast<std::size_t>(k)])] = flow::BusKind::Gen;
  const graph::DiGraph tree = group_tree(rng, spec.buses);

  std::uniform_real_distribution<double> g0(100.0, 400.0), load(60.0, 220.0), span(400.0, 900.0),
      ramp(60.0, 200.0), quad(spec.quad_lo, spec.quad_hi), slack(1000.0, 3500.0), feeder(3000.0, 5000.0);
  std::vector<flow::Generator> gens;
  Eigen::VectorXd base(spec.generators);
  for (int k = 0; k < spec.generators; ++k) {
    flow::Generator g;
    g.g0 = base(k) = g0(rng);
    g.gmin = g.g0 - 1.25 * span(rng);
    g.gmax = g.g0 + span(rng);
    g.ramp = ramp(rng);
    g.quad = quad(rng);
    gens.push_back(g);
  }
  Eigen::VectorXd mean(spec.buses - 1 - spec.generators);
  for (Eigen::Index k = 0; k < mean.size(); ++k) mean(k) = load(rng);
  const double p0 = mean.sum() - base.sum();

  // Limits: baseline flow, plus 4.5 flow standard deviations under the
  // variable-load scenario, plus slack that is wider on the feeders leaving
  // the tie bus.
  const flow::NetworkModel probe(tree, kinds, gens, Eigen::VectorXd::Ones(tree.edge_count()), p0);
  const Eigen::VectorXd flow = probe.flows(base, mean);
  const Eigen::VectorXd sigma = abs::flow_standard_deviation(
      probe, abs::LoadDistribution::diagonal(mean, spec.variance_scale * mean.array().square().matrix()));
  Eigen::VectorXd limit(flow.size());
  for (Eigen::Index j = 0; j < flow.size(); ++j) {
    const auto& e = tree.edge(static_cast<int>(j));
    limit(j) = std::abs(flow(j)) + 4.5 * sigma(j) + (e.tail == 1 || e.head == 1 ? feeder(rng) : slack(rng));
  }
  flow::NetworkModel net(tree, std::move(kinds), std::move(gens), limit, p0, name);
  if (!flow::feasible_flow_exists(net, {p0, base, mean}).feasible) return std::nullopt;
  return GroupNetwork{std::move(net), std::move(mean)};
}

}  // namespace detail

/// group_count * per_group tree microgrids with quadratic generator costs.
/// Members of a group share the network, baseline generation and mean
/// loads, and differ in their load scenario (member_scenario). Deterministic
/// in seed.
inline std::vector<FleetMember> synth_fleet(int group_count, int per_group, std::uint64_t seed,
                                            const FleetSpec& spec = {}) {
  if (group_count < 1 || per_group < 1) fail(ErrorCode::InvalidArgument, "fleet counts must be at least 1");
  if (spec.generators < 1 || spec.buses < spec.generators + 1)
    fail(ErrorCode::InvalidArgument, "fleet needs a tie bus and at least one generator");
  if (!(spec.variance_scale >= 0.0)) fail(ErrorCode::InvalidArgument, "variance scale must be non-negative");
  std::mt19937_64 rng(seed);
  std::vector<FleetMember> fleet;
  for (int g = 0; g < group_count; ++g) {
    std::optional<detail::GroupNetwork> group;
    while (!group) group = detail::try_group(rng, spec, "mg" + std::to_string(g + 1));
    for (int m = 0; m < per_group; ++m) {
      const MemberScenario sc = member_scenario(m);
      const Eigen::VectorXd& mean = group->mean_load;
      const auto& base = group->net;
      FleetMember member{flow::NetworkModel(base.graph(), base.kinds(), base.generators(), base.flow_limit(),
                                            base.baseline_tie(), base.name() + "_" + std::to_string(m + 1)),
                         abs::LoadDistribution::constant(mean), g, std::nullopt, std::nullopt};
      if (sc.variable && spec.variance_scale > 0.0) {
        member.loads = abs::LoadDistribution::diagonal(mean, spec.variance_scale * mean.array().square().matrix());
        member.eps_prime = sc.eps_prime;
        member.eps = sc.eps;
      }
      fleet.push_back(std::move(member));
    }
  }
  return fleet;
}

// --- scenario --------------------------------------------------------------

struct Scenario {
  std::vector<FleetMember> fleet;
  RegulationSignal signal;
  coord::Gains gains;
  double dt = 1e-3;
  graph::DiGraph topology;
  double eps_prime = 0.1;
  double eps = 4.2e-5;
  double k = 1.0;
  std::optional<double> requirement;  // per side, defaults to the largest excursion tracked
  std::uint64_t seed = 0;
  int instants = 100;
  int recompute_stride = 25;
  int grid_size = 101;
  bool resample_loads = true;
  long max_steps = 100000;
  bool warm_start = false;  // start each instant from the previous setpoints

  int size() const { return static_cast<int>(fleet.size()); }
  int horizon() const { return std::min(instants, static_cast<int>(signal.size())); }
};

inline graph::DiGraph topology_from(const std::string& kind, int n) {
  if (n == 1) return graph::DiGraph(1, {});
  if (kind == "ring") return graph::directed_ring(n);
  if (kind == "ring_chords") return graph::ring_with_chords(n);
  if (kind == "undirected_ring") return graph::undirected_ring(n);
  if (kind == "complete") return graph::complete_graph(n);
  fail(ErrorCode::InvalidArgument, "unknown topology kind '" + kind + "'");
}

/// Reads a scenario file. Relative paths resolve against its directory.
/// `seed_override` takes precedence over the file's seed.
inline Scenario parse_scenario(const io::json& j, const std::filesystem::path& base_dir,
                               std::optional<std::uint64_t> seed_override = {}) {
  using io::detail::need;
  using io::detail::number;
  using io::detail::number_or;
  io::detail::only_keys(j, {"fleet", "signal", "gains", "dt", "topology", "epsilon_prime", "epsilon", "k",
                            "requirement", "seed", "instants", "recompute_stride", "grid_size", "resample_loads",
                            "max_steps", "warm_start"},
                        "scenario");
  Scenario s;
  if (seed_override) s.seed = *seed_override;
  else if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) fail(ErrorCode::ParseError, "scenario.seed must be a non-negative integer");
    s.seed = j.at("seed").get<std::uint64_t>();
  }

  const io::json& fleet = need(j, "fleet", "scenario");
  io::detail::only_keys(fleet, {"synthetic", "files"}, "fleet");
  if (fleet.contains("synthetic") == fleet.contains("files"))
    fail(ErrorCode::ParseError, "fleet needs exactly one of synthetic or files");
  if (fleet.contains("synthetic")) {
    const io::json& syn = fleet.at("synthetic");
    io::detail::only_keys(syn, {"groups", "per_group", "buses", "generators", "variance_scale"}, "fleet.synthetic");
    FleetSpec spec;
    spec.buses = static_cast<int>(number_or(syn, "buses", spec.buses, "fleet.synthetic"));
    spec.generators = static_cast<int>(number_or(syn, "generators", spec.generators, "fleet.synthetic"));
    spec.variance_scale = number_or(syn, "variance_scale", spec.variance_scale, "fleet.synthetic");
    s.fleet = synth_fleet(static_cast<int>(number_or(syn, "groups", 4, "fleet.synthetic")),
                          static_cast<int>(number_or(syn, "per_group", 3, "fleet.synthetic")), s.seed, spec);
  } else {
    const io::json& files = fleet.at("files");
    if (!files.is_array() || files.empty()) fail(ErrorCode::ParseError, "fleet.files must be a non-empty array");
    for (const io::json& f : files) {
      if (!f.is_string()) fail(ErrorCode::ParseError, "fleet.files entries must be paths");
      auto nf = io::load_network(base_dir / f.get<std::string>());
      s.fleet.push_back({std::move(nf.net), std::move(nf.loads), static_cast<int>(s.fleet.size()), {}, {}});
    }
  }

  const io::json& sig = need(j, "signal", "scenario");
  io::detail::only_keys(sig, {"path", "scale"}, "signal");
  if (!need(sig, "path", "signal").is_string()) fail(ErrorCode::ParseError, "signal.path must be a string");
  s.signal = load_signal(base_dir / sig.at("path").get<std::string>(), number_or(sig, "scale", 1.0, "signal"));

  if (j.contains("gains")) {
    const io::json& g = j.at("gains");
    io::detail::only_keys(g, {"mu", "mu2", "nu", "beta"}, "gains");
    s.gains.mu = number_or(g, "mu", s.gains.mu, "gains");
    s.gains.mu2 = number_or(g, "mu2", s.gains.mu2, "gains");
    s.gains.nu = number_or(g, "nu", s.gains.nu, "gains");
    s.gains.beta = number_or(g, "beta", s.gains.beta, "gains");
  }
  s.dt = number_or(j, "dt", s.dt, "scenario");
  s.eps_prime = number_or(j, "epsilon_prime", s.eps_prime, "scenario");
  s.eps = number_or(j, "epsilon", s.eps, "scenario");
  s.k = number_or(j, "k", s.k, "scenario");
  if (j.contains("requirement")) s.requirement = number(j.at("requirement"), "scenario.requirement");
  s.instants = static_cast<int>(number_or(j, "instants", s.instants, "scenario"));
  s.recompute_stride = static_cast<int>(number_or(j, "recompute_stride", s.recompute_stride, "scenario"));
  s.grid_size = static_cast<int>(number_or(j, "grid_size", s.grid_size, "scenario"));
  s.max_steps = static_cast<long>(number_or(j, "max_steps", static_cast<double>(s.max_steps), "scenario"));
  if (j.contains("resample_loads")) {
    if (!j.at("resample_loads").is_boolean()) fail(ErrorCode::ParseError, "resample_loads must be a boolean");
    s.resample_loads = j.at("resample_loads").get<bool>();
  }
  if (j.contains("warm_start")) {
    if (!j.at("warm_start").is_boolean()) fail(ErrorCode::ParseError, "warm_start must be a boolean");
    s.warm_start = j.at("warm_start").get<bool>();
  }
  if (s.instants < 1 || s.recompute_stride < 1) fail(ErrorCode::InvalidArgument, "instants and stride must be positive");

  const int n = s.size();
  std::string kind = "ring_chords";
  if (j.contains("topology")) {
    const io::json& t = j.at("topology");
    io::detail::only_keys(t, {"kind", "edges"}, "topology");
    if (!need(t, "kind", "topology").is_string()) fail(ErrorCode::ParseError, "topology.kind must be a string");
    kind = t.at("kind").get<std::string>();
    if (kind == "edges") {
      const io::json& edges = need(t, "edges", "topology");
      if (!edges.is_array()) fail(ErrorCode::ParseError, "topology.edges must be an array of [from, to]");
      std::vector<graph::Edge> list;
      for (const io::json& e : edges) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
          fail(ErrorCode::ParseError, "topology.edges entries must be [from, to]");
        list.push_back({e[0].get<int>(), e[1].get<int>()});
      }
      s.topology = graph::DiGraph(n, std::move(list));
    }
  }
  if (kind != "edges") s.topology = topology_from(kind, n);
  if (!graph::is_strongly_connected(s.topology) || !graph::is_weight_balanced(s.topology))
    fail(ErrorCode::GraphHypothesisViolated, "communication graph must be strongly connected and weight-balanced");
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {}) {
  return parse_scenario(io::read_json(path), path.parent_path(), seed_override);
}

// --- market stage ----------------------------------------------------------

struct MarketSetup {
  std::vector<abs::MicrogridAbstraction> period;  // abstractions at the load distribution
  market::MarketAward up;
  market::MarketAward down;
  double requirement_up = 0.0;
  double requirement_down = 0.0;
};

/// Largest excursion of the tracked signal towards up (sign -1) or down (+1).
inline double default_requirement(const Scenario& s, double sign) {
  double m = 0.0;
  for (int i = 0; i < s.horizon(); ++i) m = std::max(m, sign * s.signal.x_r(static_cast<std::size_t>(i)));
  return m;
}

/// Period abstractions, one bid per side and microgrid, and both markets
/// cleared at the capacity requirement.
inline MarketSetup prepare_market(const Scenario& s) {
  MarketSetup m;
  m.requirement_up = s.requirement.value_or(default_requirement(s, -1.0));
  m.requirement_down = s.requirement.value_or(default_requirement(s, +1.0));
  std::vector<market::RegulationBid> up, down;
  std::vector<int> up_of, down_of;
  for (int i = 0; i < s.size(); ++i) {
    const auto& member = s.fleet[static_cast<std::size_t>(i)];
    m.period.push_back(abs::build_abstraction(member.net, member.loads, member.eps_prime.value_or(s.eps_prime),
                                              member.eps.value_or(s.eps), {s.grid_size, {}}));
    const auto& a = m.period.back();
    const auto cost = abs::NodeCost::of(member.net);
    if (a.up < 0.0) up.push_back(market::make_bid(a, cost, s.k, market::Side::Up, member.net.name()));
    if (a.down > 0.0) down.push_back(market::make_bid(a, cost, s.k, market::Side::Down, member.net.name()));
    if (a.up < 0.0) up_of.push_back(i);
    if (a.down > 0.0) down_of.push_back(i);
  }
  // Expand the awards back to fleet order.
  auto expand = [&](const market::MarketAward& cleared, const std::vector<int>& of) {
    market::MarketAward out;
    out.clearing_price = cleared.clearing_price;
    out.cleared_capacity.assign(static_cast<std::size_t>(s.size()), 0.0);
    out.cleared_mileage.assign(static_cast<std::size_t>(s.size()), 0.0);
    for (const auto& f : s.fleet) out.id.push_back(f.net.name());
    for (std::size_t k = 0; k < of.size(); ++k) {
      out.cleared_capacity[static_cast<std::size_t>(of[k])] = cleared.cleared_capacity[k];
      out.cleared_mileage[static_cast<std::size_t>(of[k])] = cleared.cleared_mileage[k];
    }
    return out;
  };
  m.up = expand(market::clear_market(up, m.requirement_up), up_of);
  m.down = expand(market::clear_market(down, m.requirement_down), down_of);
  return m;
}

// --- tracking --------------------------------------------------------------

enum class Method { Proposed, Current };

inline const char* to_string(Method m) { return m == Method::Proposed ? "proposed" : "current"; }

inline Method parse_method(const std::string& s) {
  if (s == "proposed") return Method::Proposed;
  if (s == "current") return Method::Current;
  fail(ErrorCode::InvalidArgument, "method must be proposed or current");
}

struct InstantRecord {
  double t = 0.0;
  double x_r = 0.0;
  Eigen::VectorXd x;
  double procured = 0.0;
  double residual = 0.0;  // x_r - procured
  double cost = 0.0;
  double box_lo = 0.0;    // sum of effective lower ends
  double box_hi = 0.0;
  double ramp_budget = 0.0;  // sum of R_i(x_i^-)
  double oracle_gap = 0.0;   // penalized objective above the centralized optimum
  long steps = 0;
  bool converged = true;

  bool coverable(double tol) const { return x_r >= box_lo - tol && x_r <= box_hi + tol; }
};

struct TrackingResult {
  Method method = Method::Proposed;
  std::vector<std::string> names;
  std::vector<InstantRecord> instants;
  std::vector<Eigen::VectorXd> mileage;     // cumulative per aggregator after each instant
  std::vector<Eigen::VectorXd> ramp_total;  // cumulative R_i(x_i^-) after each instant

  std::size_t size() const noexcept { return instants.size(); }
  double cumulative_cost() const {
    double c = 0.0;
    for (const auto& r : instants) c += r.cost;
    return c;
  }
};

struct TrackingOptions {
  int trace_stride = 0;  // coordination trace every this many steps, 0 for none
  std::vector<std::vector<coord::TracePoint>>* traces = nullptr;
};

namespace detail {

// Realized loads for every instant, drawn before any method runs so both
// methods see the same realization. Negative draws are clipped at zero.
inline std::vector<std::vector<Eigen::VectorXd>> realized_loads(const Scenario& s) {
  std::mt19937_64 rng(s.seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::MatrixXd> roots;
  for (const auto& m : s.fleet) {
    if (m.loads.is_degenerate() || !s.resample_loads) {
      roots.emplace_back();
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.loads.cov);
    roots.push_back(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
  }
  std::vector<std::vector<Eigen::VectorXd>> out(static_cast<std::size_t>(s.horizon()));
  for (auto& instant : out) {
    for (std::size_t i = 0; i < s.fleet.size(); ++i) {
      const auto& mean = s.fleet[i].loads.mean;
      if (roots[i].size() == 0) {
        instant.push_back(mean);
        continue;
      }
      Eigen::VectorXd w(mean.size());
      for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = normal(rng);
      instant.push_back((mean + roots[i] * w).cwiseMax(0.0));
    }
  }
  return out;
}

/// Splits `total` over boxes that need not contain 0: each resource first
/// takes the point of its box nearest 0, then the rest is split in
/// proportion to mileage over the shifted boxes.
inline market::Allocation proportional_in_boxes(const std::vector<double>& mileage,
                                                const std::vector<coord::Box>& box, double total) {
  std::vector<double> base(box.size()), lo(box.size()), hi(box.size());
  double committed = 0.0;
  for (std::size_t i = 0; i < box.size(); ++i) {
    base[i] = std::clamp(0.0, box[i].lo, box[i].hi);
    lo[i] = box[i].lo - base[i];
    hi[i] = box[i].hi - base[i];
    committed += base[i];
  }
  if (total == committed) return {base, 0.0};
  market::Allocation a = market::proportional_allocation(mileage, lo, hi, total - committed);
  for (std::size_t i = 0; i < box.size(); ++i) a.setpoint[i] += base[i];
  return a;
}

template <class C>
double penalized_objective(const coord::CoordinationProblem<C>& p, const Eigen::VectorXd& x) {
  double f = 0.0;
  for (int i = 0; i < p.size(); ++i) f += p.cost[static_cast<std::size_t>(i)].value(x(i));
  return f + p.gains.mu * std::max(0.0, coord::shortfall(x, p));
}

}  // namespace detail

/// Tracks the scenario's signal with one method. Per instant: realized
/// capacities intersected with the awards and the cost domain, then with the
/// ramp reach R_i(x_i^-); setpoints by the distributed dynamics (proposed)
/// or mileage-proportional allocation in the same boxes (current); costs by
/// the abstraction recomputed from realized loads every recompute_stride
/// instants.
inline TrackingResult run_tracking(const Scenario& s, Method method, const MarketSetup& market,
                                   const TrackingOptions& opts = {}) {
  const int n = s.size();
  const auto loads = detail::realized_loads(s);
  TrackingResult out;
  out.method = method;
  for (const auto& m : s.fleet) out.names.push_back(m.net.name());

  std::vector<abs::MicrogridAbstraction> current(static_cast<std::size_t>(n));
  Eigen::VectorXd x_prev = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mileage = Eigen::VectorXd::Zero(n), ramp_total = Eigen::VectorXd::Zero(n);
  const double tol = 1e-9 * (1.0 + std::abs(s.signal.scale));

  for (int t = 0; t < s.horizon(); ++t) {
    const auto& l = loads[static_cast<std::size_t>(t)];
    if (t % s.recompute_stride == 0)
      for (int i = 0; i < n; ++i)
        current[static_cast<std::size_t>(i)] =
            abs::build_abstraction(s.fleet[static_cast<std::size_t>(i)].net,
                                   abs::LoadDistribution::constant(l[static_cast<std::size_t>(i)]), s.eps_prime,
                                   s.eps, {s.grid_size, {}});

    InstantRecord rec;
    rec.t = s.signal.t[static_cast<std::size_t>(t)];
    rec.x_r = s.signal.x_r(static_cast<std::size_t>(t));
    std::vector<coord::Box> boxes;
    std::vector<coord::InterpolatedCost> costs;
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const auto& a = current[k];
      const auto cap = abs::capacity_bounds_deterministic(s.fleet[k].net, l[k]);
      const double lo = std::max({std::min(cap.up, 0.0), -market.up.cleared_capacity[k], a.cost.front()});
      const double hi = std::min({std::max(cap.down, 0.0), market.down.cleared_capacity[k], a.cost.back()});
      const double r = a.R(x_prev(i));
      boxes.push_back(coord::effective_box(std::min(lo, 0.0), std::max(hi, 0.0), x_prev(i), r));
      costs.emplace_back(a.cost);
      rec.box_lo += boxes.back().lo;
      rec.box_hi += boxes.back().hi;
      rec.ramp_budget += r;
      ramp_total(i) += r;
    }

    Eigen::VectorXd x(n);
    if (method == Method::Proposed) {
      coord::Gains gains = s.gains;
      auto problem = coord::make_problem(costs, boxes, rec.x_r, s.topology, gains);
      problem.gains.mu = std::max(gains.mu, coord::penalty_threshold(problem));
      problem.gains.mu2 = std::max(gains.mu2, problem.gains.mu * gains.mu2 / gains.mu);
      coord::SolveOptions so;
      so.dt = s.dt;
      so.max_steps = s.max_steps;
      so.trace_stride = opts.trace_stride;
      if (s.warm_start) so.warm_start = x_prev;
      auto r = coord::solve_instant(problem, so);
      for (int i = 0; i < n; ++i) x(i) = std::clamp(r.x(i), boxes[static_cast<std::size_t>(i)].lo, boxes[static_cast<std::size_t>(i)].hi);
      rec.steps = r.steps;
      rec.converged = r.converged;
      const Eigen::VectorXd best = coord::centralized_oracle(problem);
      rec.oracle_gap = detail::penalized_objective(problem, x) - detail::penalized_objective(problem, best);
      if (opts.traces) opts.traces->push_back(std::move(r.trace));
    } else {
      const auto& side = rec.x_r < 0.0 ? market.up : market.down;
      const auto a = detail::proportional_in_boxes(side.cleared_mileage, boxes, rec.x_r);
      for (int i = 0; i < n; ++i) x(i) = a.setpoint[static_cast<std::size_t>(i)];
    }

    rec.x = x;
    rec.procured = x.sum();
    rec.residual = rec.x_r - rec.procured;
    if (std::abs(rec.residual) < tol) rec.residual = 0.0;
    for (int i = 0; i < n; ++i) rec.cost += current[static_cast<std::size_t>(i)].f(x(i));
    mileage += (x - x_prev).cwiseAbs();
    x_prev = x;
    out.instants.push_back(std::move(rec));
    out.mileage.push_back(mileage);
    out.ramp_total.push_back(ramp_total);
  }
  return out;
}

inline TrackingResult run_tracking(const Scenario& s, Method method, const TrackingOptions& opts = {}) {
  return run_tracking(s, method, prepare_market(s), opts);
}

// --- result files ----------------------------------------------------------

/// instant,t,x_r,x_1..x_N,procured,residual,cost,cumulative_cost,
/// mileage_1..mileage_N,box_lo,box_hi,ramp_budget,oracle_gap,steps,converged
inline io::Table result_table(const TrackingResult& r) {
  io::Table t;
  const std::size_t n = r.names.size();
  t.header = {"instant", "t", "x_r"};
  for (std::size_t i = 1; i <= n; ++i) t.header.push_back("x_" + std::to_string(i));
  for (const char* c : {"procured", "residual", "cost", "cumulative_cost"}) t.header.emplace_back(c);
  for (std::size_t i = 1; i <= n; ++i) t.header.push_back("mileage_" + std::to_string(i));
  for (const char* c : {"box_lo", "box_hi", "ramp_budget", "oracle_gap", "steps", "converged"}) t.header.emplace_back(c);
  double cumulative = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    const auto& rec = r.instants[k];
    cumulative += rec.cost;
    std::vector<double> row = {static_cast<double>(k), rec.t, rec.x_r};
    for (Eigen::Index i = 0; i < rec.x.size(); ++i) row.push_back(rec.x(i));
    for (double v : {rec.procured, rec.residual, rec.cost, cumulative}) row.push_back(v);
    for (Eigen::Index i = 0; i < r.mileage[k].size(); ++i) row.push_back(r.mileage[k](i));
    for (double v : {rec.box_lo, rec.box_hi, rec.ramp_budget, rec.oracle_gap, static_cast<double>(rec.steps),
                     rec.converged ? 1.0 : 0.0})
      row.push_back(v);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline TrackingResult result_from_table(const io::Table& t, Method method = Method::Proposed) {
  TrackingResult r;
  r.method = method;
  std::size_t n = 0;
  while (std::find(t.header.begin(), t.header.end(), "x_" + std::to_string(n + 1)) != t.header.end()) ++n;
  for (std::size_t i = 1; i <= n; ++i) r.names.push_back("x_" + std::to_string(i));
  const auto col = [&](const std::string& name) { return static_cast<std::size_t>(t.column(name)); };
  for (const auto& row : t.rows) {
    InstantRecord rec;
    rec.t = row[col("t")];
    rec.x_r = row[col("x_r")];
    rec.x.resize(static_cast<Eigen::Index>(n));
    Eigen::VectorXd m(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      rec.x(static_cast<Eigen::Index>(i)) = row[col("x_" + std::to_string(i + 1))];
      m(static_cast<Eigen::Index>(i)) = row[col("mileage_" + std::to_string(i + 1))];
    }
    rec.procured = row[col("procured")];
    rec.residual = row[col("residual")];
    rec.cost = row[col("cost")];
    rec.box_lo = row[col("box_lo")];
    rec.box_hi = row[col("box_hi")];
    rec.ramp_budget = row[col("ramp_budget")];
    rec.oracle_gap = row[col("oracle_gap")];
    rec.steps = static_cast<long>(row[col("steps")]);
    rec.converged = row[col("converged")] != 0.0;
    r.instants.push_back(std::move(rec));
    r.mileage.push_back(m);
  }
  return r;
}

/// step,t,x_1..x_N,sum_x,delta_x,fp
inline io::Table trace_table(const std::vector<coord::TracePoint>& trace) {
  io::Table t;
  t.header = {"step", "t"};
  const Eigen::Index n = trace.empty() ? 0 : trace.front().x.size();
  for (Eigen::Index i = 1; i <= n; ++i) t.header.push_back("x_" + std::to_string(i));
  for (const char* c : {"sum_x", "delta_x", "fp"}) t.header.emplace_back(c);
  for (const auto& p : trace) {
    std::vector<double> row = {static_cast<double>(p.step), p.t};
    for (Eigen::Index i = 0; i < p.x.size(); ++i) row.push_back(p.x(i));
    for (double v : {p.sum_x, p.delta_x, p.fp}) row.push_back(v);
    t.rows.push_back(std::move(row));
  }
  return t;
}

// --- comparison ------------------------------------------------------------

struct Comparison {
  std::vector<double> x_r;
  std::vector<double> residual_a;
  std::vector<double> residual_b;
  double cost_a = 0.0;
  double cost_b = 0.0;
  Eigen::VectorXd mileage_a;
  Eigen::VectorXd mileage_b;
  double rms_a = 0.0;
  double rms_b = 0.0;

  double cost_delta() const { return cost_a - cost_b; }
};

/// a versus b on the same signal; throws MismatchedScenarios otherwise.
inline Comparison compare(const TrackingResult& a, const TrackingResult& b) {
  if (a.size() != b.size() || a.names.size() != b.names.size())
    fail(ErrorCode::MismatchedScenarios, "results differ in length or fleet size");
  Comparison c;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto &ra = a.instants[k], &rb = b.instants[k];
    if (ra.x_r != rb.x_r || ra.t != rb.t)
      fail(ErrorCode::MismatchedScenarios, "results track different signals at instant " + std::to_string(k));
    c.x_r.push_back(ra.x_r);
    c.residual_a.push_back(ra.residual);
    c.residual_b.push_back(rb.residual);
    c.rms_a += ra.residual * ra.residual;
    c.rms_b += rb.residual * rb.residual;
  }
  if (a.size() > 0) {
    c.rms_a = std::sqrt(c.rms_a / static_cast<double>(a.size()));
    c.rms_b = std::sqrt(c.rms_b / static_cast<double>(a.size()));
  }
  c.cost_a = a.cumulative_cost();
  c.cost_b = b.cumulative_cost();
  const auto n = static_cast<Eigen::Index>(a.names.size());
  c.mileage_a = a.mileage.empty() ? Eigen::VectorXd::Zero(n) : a.mileage.back();
  c.mileage_b = b.mileage.empty() ? Eigen::VectorXd::Zero(n) : b.mileage.back();
  return c;
}

/// instant,x_r,residual_a,residual_b
inline io::Table comparison_table(const Comparison& c) {
  io::Table t;
  t.header = {"instant", "x_r", "residual_a", "residual_b"};
  for (std::size_t k = 0; k < c.x_r.size(); ++k)
    t.rows.push_back({static_cast<double>(k), c.x_r[k], c.residual_a[k], c.residual_b[k]});
  return t;
}

inline std::string summary_text(const Comparison& c, const std::string& a = "a", const std::string& b = "b") {
  std::string s;
  s += "instants: " + std::to_string(c.x_r.size()) + "\n";
  s += "cumulative cost " + a + ": " + io::fmt(c.cost_a) + "\n";
  s += "cumulative cost " + b + ": " + io::fmt(c.cost_b) + "\n";
  s += "cost delta (" + a + " - " + b + "): " + io::fmt(c.cost_delta()) + "\n";
  s += "rms residual " + a + ": " + io::fmt(c.rms_a) + "\n";
  s += "rms residual " + b + ": " + io::fmt(c.rms_b) + "\n";
  s += "realized mileage (aggregator," + a + "," + b + "):\n";
  for (Eigen::Index i = 0; i < c.mileage_a.size(); ++i)
    s += "  " + std::to_string(i + 1) + "," + io::fmt(c.mileage_a(i)) + "," + io::fmt(c.mileage_b(i)) + "\n";
  s += "note: current practice is clipped by the same per-instant ramp boxes as the proposed method\n";
  return s;
}

}  // namespace regnet::harness
