#pragma once

// Lossless linear power flow on a microgrid. Bus 1 is the tie to the bulk
// grid; every other bus is either controllable ("gen") or an uncontrollable
// load. Injections are [P, g, -l] in bus order and satisfy M * omega = inj.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "regnet/convexsolve.hpp"
#include "regnet/errors.hpp"
#include "regnet/netgraph.hpp"

namespace regnet::flow {

inline constexpr double kBalanceTolerance = 1e-9;

enum class BusKind { Tie, Gen, Load };

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::Tie: return "tie";
    case BusKind::Gen: return "gen";
    case BusKind::Load: return "load";
  }
  return "?";
}

/// Controllable node parameters. Cost is quad * (g - g0)^2 + lin * |g - g0|.
struct Generator {
  double gmin = 0.0;
  double gmax = 0.0;
  double g0 = 0.0;
  double ramp = 0.0;
  double quad = 1.0;
  double lin = 0.0;
};

struct Injection {
  double tie = 0.0;       // P
  Eigen::VectorXd gen;    // g over controllable buses
  Eigen::VectorXd load;   // l over load buses, consumption positive
};

/// Columns of the pseudoinverse of M grouped by bus kind.
struct PseudoinverseSplit {
  Eigen::VectorXd m1;  // tie column
  Eigen::MatrixXd m2;  // controllable columns
  Eigen::MatrixXd m3;  // load columns
};

class NetworkModel {
 public:
  NetworkModel(graph::DiGraph graph, std::vector<BusKind> kinds, std::vector<Generator> gens,
               Eigen::VectorXd flow_limit, double baseline_tie, std::string name = {})
      : graph_(std::move(graph)),
        kinds_(std::move(kinds)),
        gens_(std::move(gens)),
        limit_(std::move(flow_limit)),
        p0_(baseline_tie),
        name_(std::move(name)) {
    const int n = graph_.vertex_count();
    if (n < 2) fail(ErrorCode::InvalidArgument, "a microgrid needs at least two buses");
    if (static_cast<int>(kinds_.size()) != n)
      fail(ErrorCode::InvalidArgument, "one bus kind per bus required");
    if (kinds_[0] != BusKind::Tie) fail(ErrorCode::InvalidArgument, "bus 1 must be the tie bus");
    for (int b = 1; b < n; ++b) {
      const auto k = kinds_[static_cast<std::size_t>(b)];
      if (k == BusKind::Tie) fail(ErrorCode::InvalidArgument, "only bus 1 may be a tie bus");
      (k == BusKind::Gen ? gen_buses_ : load_buses_).push_back(b);
    }
    if (gen_buses_.empty()) fail(ErrorCode::InvalidArgument, "a microgrid needs a controllable bus");
    if (gens_.size() != gen_buses_.size())
      fail(ErrorCode::InvalidArgument, "one generator record per controllable bus required");
    for (const auto& g : gens_) {
      if (!(g.gmin <= g.g0 && g.g0 <= g.gmax))
        fail(ErrorCode::InvalidArgument, "generator requires gmin <= g0 <= gmax");
      if (!(g.ramp >= 0.0)) fail(ErrorCode::InvalidArgument, "ramp must be nonnegative");
      if (!(g.quad >= 0.0) || !(g.lin >= 0.0))
        fail(ErrorCode::InvalidArgument, "cost coefficients must be nonnegative");
      if (!std::isfinite(g.gmin) || !std::isfinite(g.gmax) || !std::isfinite(g.ramp))
        fail(ErrorCode::InvalidArgument, "generator parameters must be finite");
    }
    if (limit_.size() != graph_.edge_count())
      fail(ErrorCode::InvalidArgument, "one flow limit per line required");
    for (Eigen::Index j = 0; j < limit_.size(); ++j)
      if (!(limit_(j) > 0.0) || !std::isfinite(limit_(j)))
        fail(ErrorCode::InvalidArgument, "flow limits must be positive and finite");
    if (!std::isfinite(p0_)) fail(ErrorCode::InvalidArgument, "baseline tie power must be finite");
    if (!graph::is_connected(graph_))
      fail(ErrorCode::DisconnectedGraph, "microgrid network must be connected");
    if (!graph::has_non_overlapping_loops(graph_))
      fail(ErrorCode::OverlappingLoops, "microgrid loops must not share lines");

    incidence_ = graph::incidence_matrix(graph_);
    loops_ = graph::fundamental_loop_matrix(graph_);
    pinv_ = incidence_.completeOrthogonalDecomposition().pseudoInverse();
    split_.m1 = pinv_.col(0);
    split_.m2 = columns(pinv_, gen_buses_);
    split_.m3 = columns(pinv_, load_buses_);
    const Eigen::RowVectorXd ones_g = Eigen::RowVectorXd::Ones(gen_count());
    const Eigen::RowVectorXd ones_l = Eigen::RowVectorXd::Ones(load_count());
    a_gen_ = split_.m2 - split_.m1 * ones_g;
    a_load_ = split_.m1 * ones_l - split_.m3;
    if (loops_.cols() == 0) {
      path_ = graph::path_matrix(graph::TreeCertificate(graph_, 1));
      tree_ = true;
    }
  }

  const graph::DiGraph& graph() const noexcept { return graph_; }
  const std::vector<BusKind>& kinds() const noexcept { return kinds_; }
  const std::vector<Generator>& generators() const noexcept { return gens_; }
  const Eigen::VectorXd& flow_limit() const noexcept { return limit_; }
  double baseline_tie() const noexcept { return p0_; }
  const std::string& name() const noexcept { return name_; }

  int bus_count() const noexcept { return graph_.vertex_count(); }
  int line_count() const noexcept { return graph_.edge_count(); }
  int gen_count() const noexcept { return static_cast<int>(gen_buses_.size()); }
  int load_count() const noexcept { return static_cast<int>(load_buses_.size()); }
  int loop_count() const noexcept { return static_cast<int>(loops_.cols()); }
  bool is_tree() const noexcept { return tree_; }

  /// Zero-based bus indices of controllable and load buses, ascending.
  const std::vector<int>& gen_buses() const noexcept { return gen_buses_; }
  const std::vector<int>& load_buses() const noexcept { return load_buses_; }

  const Eigen::MatrixXd& incidence() const noexcept { return incidence_; }
  const Eigen::MatrixXd& loops() const noexcept { return loops_; }
  const Eigen::MatrixXd& pseudoinverse() const noexcept { return pinv_; }
  const PseudoinverseSplit& split() const noexcept { return split_; }
  /// Path matrix with the tie bus as reference; empty unless the network is a tree.
  const Eigen::MatrixXd& path() const noexcept { return path_; }

  /// Flow coefficients with the tie power eliminated through balance:
  /// omega = A_g g + A_l l + N gamma.
  const Eigen::MatrixXd& gen_flow() const noexcept { return a_gen_; }
  const Eigen::MatrixXd& load_flow() const noexcept { return a_load_; }

  Eigen::VectorXd gmin() const { return collect(&Generator::gmin); }
  Eigen::VectorXd gmax() const { return collect(&Generator::gmax); }
  Eigen::VectorXd g0() const { return collect(&Generator::g0); }
  Eigen::VectorXd ramp() const { return collect(&Generator::ramp); }

  /// Full bus injection vector [P, g, -l] in bus order.
  Eigen::VectorXd injection_vector(const Injection& inj) const {
    check_dims(inj);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(bus_count());
    v(0) = inj.tie;
    for (int k = 0; k < gen_count(); ++k) v(gen_buses_[static_cast<std::size_t>(k)]) = inj.gen(k);
    for (int k = 0; k < load_count(); ++k)
      v(load_buses_[static_cast<std::size_t>(k)]) = -inj.load(k);
    return v;
  }

  void check_dims(const Injection& inj) const {
    if (inj.gen.size() != gen_count() || inj.load.size() != load_count())
      fail(ErrorCode::InvalidArgument, "injection dimensions do not match the network");
  }

  /// Flows for a balanced operating point with loop flows gamma.
  Eigen::VectorXd flows(const Eigen::VectorXd& g, const Eigen::VectorXd& l,
                        const Eigen::VectorXd& gamma = {}) const {
    Eigen::VectorXd w = a_gen_ * g + a_load_ * l;
    if (loop_count() > 0 && gamma.size() == loop_count()) w += loops_ * gamma;
    return w;
  }

 private:
  static Eigen::MatrixXd columns(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
    return out;
  }

  Eigen::VectorXd collect(double Generator::*field) const {
    Eigen::VectorXd v(gen_count());
    for (int k = 0; k < gen_count(); ++k) v(k) = gens_[static_cast<std::size_t>(k)].*field;
    return v;
  }

  graph::DiGraph graph_;
  std::vector<BusKind> kinds_;
  std::vector<Generator> gens_;
  Eigen::VectorXd limit_;
  double p0_ = 0.0;
  std::string name_;
  std::vector<int> gen_buses_;
  std::vector<int> load_buses_;
  Eigen::MatrixXd incidence_;
  Eigen::MatrixXd loops_;
  Eigen::MatrixXd pinv_;
  PseudoinverseSplit split_;
  Eigen::MatrixXd a_gen_;
  Eigen::MatrixXd a_load_;
  Eigen::MatrixXd path_;
  bool tree_ = false;
};

/// Throws UnbalancedInjection unless |P + 1'g - 1'l| <= 1e-9 * max|inj|.
inline void require_balanced(const NetworkModel& net, const Injection& inj) {
  const Eigen::VectorXd v = net.injection_vector(inj);
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if (std::abs(v.sum()) > kBalanceTolerance * scale)
    fail(ErrorCode::UnbalancedInjection,
         "injections sum to " + std::to_string(v.sum()) + " instead of zero");
}

/// The unique flow on a tree network: P_ref' applied to the non-tie injections.
inline Eigen::VectorXd tree_flows(const NetworkModel& net, const Injection& inj) {
  if (!net.is_tree()) fail(ErrorCode::NotATree, "tree_flows needs a tree network");
  require_balanced(net, inj);
  const Eigen::VectorXd v = net.injection_vector(inj);
  return net.path().transpose() * v.tail(net.bus_count() - 1);
}

inline PseudoinverseSplit pseudoinverse_split(const NetworkModel& net) { return net.split(); }

struct FlowCheck {
  bool feasible = false;
  Eigen::VectorXd flow;
  Eigen::VectorXd gamma;   // empty on trees
  double max_ratio = 0.0;  // max_j |omega_j| / limit_j at the returned point
};

/// Whether some loop flow keeps every line within its limit. On loop networks
/// gamma minimizes the largest limit-normalized flow.
inline FlowCheck feasible_flow_exists(const NetworkModel& net, const Injection& inj,
                                      const Eigen::VectorXd* limits = nullptr) {
  require_balanced(net, inj);
  const Eigen::VectorXd& lim = limits ? *limits : net.flow_limit();
  const Eigen::VectorXd base = net.pseudoinverse() * net.injection_vector(inj);
  FlowCheck out;
  if (net.loop_count() == 0) {
    out.flow = base;
  } else {
    // Variables (gamma, s): minimize s with -s <= (base + N gamma)_j / lim_j <= s.
    const int c = net.loop_count();
    opt::ConvexProgram p(c + 1);
    p.linear()(c) = 1.0;
    for (int j = 0; j < net.line_count(); ++j) {
      Eigen::RowVectorXd row(c + 1);
      row.head(c) = net.loops().row(j) / lim(j);
      row(c) = -1.0;
      p.add_inequality(row, -base(j) / lim(j));
      row.head(c) = -row.head(c);
      p.add_inequality(row, base(j) / lim(j));
    }
    const auto sol = opt::solve(p);
    if (!sol.optimal()) fail(ErrorCode::NumericalFailure, "loop-flow program did not solve");
    out.gamma = sol.x.head(c);
    out.flow = base + net.loops() * out.gamma;
  }
  out.max_ratio = (out.flow.cwiseAbs().array() / lim.array()).maxCoeff();
  out.feasible = out.max_ratio <= 1.0 + kBalanceTolerance;
  return out;
}

}  // namespace regnet::flow
