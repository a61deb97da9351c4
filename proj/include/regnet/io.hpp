#pragma once

// JSON and CSV readers and writers for networks, abstractions, bids, awards
// and regulation signals. Unknown JSON fields are rejected.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regnet/abstraction.hpp"
#include "regnet/errors.hpp"
#include "regnet/market.hpp"
#include "regnet/netgraph.hpp"
#include "regnet/powerflow.hpp"

namespace regnet::io {

using nlohmann::json;

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ParseError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write '" + path.string() + "'");
  out << text;
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  if (v == std::trunc(v) && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v == 0.0 ? 0.0 : v);
    return buf;
  }
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace detail {

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::ParseError, where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) fail(ErrorCode::ParseError, where + ": unknown field '" + it.key() + "'");
}

inline const json& need(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorCode::ParseError, where + ": missing field '" + key + "'");
  return j.at(key);
}

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(ErrorCode::ParseError, where + " must be a number");
  return j.get<double>();
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : fallback;
}

inline Eigen::VectorXd vector(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::ParseError, where + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], where);
  return v;
}

inline json array(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace detail

struct NetworkFile {
  flow::NetworkModel net;
  abs::LoadDistribution loads;
};

inline NetworkFile parse_network(const json& j, const std::string& name = {}) {
  using detail::need;
  using detail::number;
  detail::only_keys(j, {"name", "buses", "lines", "p0", "loads"}, "network");
  const json& buses = need(j, "buses", "network");
  const json& lines = need(j, "lines", "network");
  if (!buses.is_array() || !lines.is_array()) fail(ErrorCode::ParseError, "buses and lines must be arrays");
  const int n = static_cast<int>(buses.size());
  std::vector<flow::BusKind> kinds(static_cast<std::size_t>(n), flow::BusKind::Load);
  std::vector<flow::Generator> gens;
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<std::pair<int, flow::Generator>> by_id;
  for (const json& b : buses) {
    detail::only_keys(b, {"id", "kind", "gmin", "gmax", "g0", "ramp", "cost"}, "bus");
    const json& id_j = need(b, "id", "bus");
    if (!id_j.is_number_integer()) fail(ErrorCode::ParseError, "bus id must be an integer");
    const int id = id_j.get<int>();
    if (id < 1 || id > n || seen[static_cast<std::size_t>(id - 1)])
      fail(ErrorCode::ParseError, "bus ids must be exactly 1.." + std::to_string(n));
    seen[static_cast<std::size_t>(id - 1)] = true;
    const json& kind_j = need(b, "kind", "bus");
    const std::string kind = kind_j.is_string() ? kind_j.get<std::string>() : "";
    const std::string where = "bus " + std::to_string(id);
    if (kind == "tie" || kind == "load") {
      for (const char* k : {"gmin", "gmax", "g0", "ramp", "cost"})
        if (b.contains(k)) fail(ErrorCode::ParseError, where + ": field '" + k + "' only applies to gen buses");
      kinds[static_cast<std::size_t>(id - 1)] = kind == "tie" ? flow::BusKind::Tie : flow::BusKind::Load;
    } else if (kind == "gen") {
      flow::Generator g;
      g.gmin = number(need(b, "gmin", where), where + ".gmin");
      g.gmax = number(need(b, "gmax", where), where + ".gmax");
      g.g0 = number(need(b, "g0", where), where + ".g0");
      g.ramp = number(need(b, "ramp", where), where + ".ramp");
      if (b.contains("cost")) {
        detail::only_keys(b.at("cost"), {"quad", "lin"}, where + ".cost");
        g.quad = detail::number_or(b.at("cost"), "quad", 1.0, where + ".cost");
        g.lin = detail::number_or(b.at("cost"), "lin", 0.0, where + ".cost");
      }
      kinds[static_cast<std::size_t>(id - 1)] = flow::BusKind::Gen;
      by_id.emplace_back(id, g);
    } else {
      fail(ErrorCode::ParseError, where + ": kind must be tie, gen or load");
    }
  }
  std::sort(by_id.begin(), by_id.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [id, g] : by_id) gens.push_back(g);

  std::vector<graph::Edge> edges;
  Eigen::VectorXd limit(static_cast<Eigen::Index>(lines.size()));
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const json& l = lines[k];
    const std::string where = "line " + std::to_string(k + 1);
    detail::only_keys(l, {"from", "to", "limit"}, where);
    const json& from = need(l, "from", where);
    const json& to = need(l, "to", where);
    if (!from.is_number_integer() || !to.is_number_integer())
      fail(ErrorCode::ParseError, where + ": endpoints must be integers");
    edges.push_back({from.get<int>(), to.get<int>()});
    limit(static_cast<Eigen::Index>(k)) = number(need(l, "limit", where), where + ".limit");
  }
  const double p0 = number(need(j, "p0", "network"), "network.p0");
  std::string label = name;
  if (j.contains("name")) {
    if (!j.at("name").is_string()) fail(ErrorCode::ParseError, "network.name must be a string");
    label = j.at("name").get<std::string>();
  }
  flow::NetworkModel net(graph::DiGraph(n, std::move(edges)), std::move(kinds), std::move(gens), limit, p0,
                         label);

  abs::LoadDistribution dist = abs::LoadDistribution::constant(Eigen::VectorXd::Zero(net.load_count()));
  if (j.contains("loads")) {
    const json& lj = j.at("loads");
    detail::only_keys(lj, {"mean", "cov_diag", "cov"}, "loads");
    const Eigen::VectorXd mean = detail::vector(need(lj, "mean", "loads"), "loads.mean");
    if (lj.contains("cov_diag") && lj.contains("cov"))
      fail(ErrorCode::ParseError, "loads: give either cov_diag or cov");
    if (lj.contains("cov_diag")) {
      dist = abs::LoadDistribution::diagonal(mean, detail::vector(lj.at("cov_diag"), "loads.cov_diag"));
    } else if (lj.contains("cov")) {
      const json& cj = lj.at("cov");
      if (!cj.is_array()) fail(ErrorCode::ParseError, "loads.cov must be an array of rows");
      Eigen::MatrixXd cov(mean.size(), mean.size());
      if (static_cast<Eigen::Index>(cj.size()) != mean.size())
        fail(ErrorCode::ParseError, "loads.cov must be square with one row per load");
      for (std::size_t r = 0; r < cj.size(); ++r) {
        const Eigen::VectorXd row = detail::vector(cj[r], "loads.cov row");
        if (row.size() != mean.size()) fail(ErrorCode::ParseError, "loads.cov must be square");
        cov.row(static_cast<Eigen::Index>(r)) = row.transpose();
      }
      dist = {mean, cov};
    } else {
      dist = abs::LoadDistribution::constant(mean);
    }
  }
  dist.validate(net.load_count());
  return {std::move(net), std::move(dist)};
}

inline NetworkFile load_network(const std::filesystem::path& path) {
  return parse_network(read_json(path), path.stem().string());
}

inline json network_json(const flow::NetworkModel& net, const abs::LoadDistribution& dist) {
  json buses = json::array();
  std::size_t gk = 0;
  for (int b = 0; b < net.bus_count(); ++b) {
    json bus = {{"id", b + 1}, {"kind", flow::to_string(net.kinds()[static_cast<std::size_t>(b)])}};
    if (net.kinds()[static_cast<std::size_t>(b)] == flow::BusKind::Gen) {
      const auto& g = net.generators()[gk++];
      bus["gmin"] = g.gmin;
      bus["gmax"] = g.gmax;
      bus["g0"] = g.g0;
      bus["ramp"] = g.ramp;
      bus["cost"] = {{"quad", g.quad}, {"lin", g.lin}};
    }
    buses.push_back(bus);
  }
  json lines = json::array();
  for (int e = 0; e < net.line_count(); ++e)
    lines.push_back({{"from", net.graph().edge(e).tail}, {"to", net.graph().edge(e).head},
                     {"limit", net.flow_limit()(e)}});
  json j = {{"buses", buses}, {"lines", lines}, {"p0", net.baseline_tie()}};
  if (!net.name().empty()) j["name"] = net.name();
  json loads = {{"mean", detail::array(dist.mean)}};
  if (!dist.is_degenerate()) {
    const Eigen::MatrixXd off = dist.cov - Eigen::MatrixXd(dist.cov.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() == 0.0) {
      loads["cov_diag"] = detail::array(dist.cov.diagonal());
    } else {
      json rows = json::array();
      for (Eigen::Index r = 0; r < dist.cov.rows(); ++r) rows.push_back(detail::array(dist.cov.row(r).transpose()));
      loads["cov"] = rows;
    }
  }
  if (net.load_count() > 0) j["loads"] = loads;
  return j;
}

// --- abstraction -----------------------------------------------------------

inline json abstraction_json(const abs::MicrogridAbstraction& a, double eps_prime, double eps) {
  json grid = json::array();
  const auto& xs = a.cost.knots();
  for (std::size_t i = 0; i < xs.size(); ++i)
    grid.push_back({{"x", xs[i]}, {"f", a.cost.values()[i]}, {"R", a.ramp.values()[i]}});
  return {{"up", a.up},
          {"down", a.down},
          {"epsilon_prime", eps_prime},
          {"epsilon", eps},
          {"grid", grid},
          {"g_up", detail::array(a.g_up)},
          {"g_down", detail::array(a.g_down)},
          {"cost_at_up", a.cost_at_up},
          {"cost_at_down", a.cost_at_down},
          {"ramp_at_up", a.ramp_at_up},
          {"ramp_at_down", a.ramp_at_down}};
}

inline abs::MicrogridAbstraction parse_abstraction(const json& j) {
  using detail::need;
  detail::only_keys(j, {"up", "down", "epsilon_prime", "epsilon", "grid", "g_up", "g_down", "cost_at_up",
                        "cost_at_down", "ramp_at_up", "ramp_at_down"},
                    "abstraction");
  abs::MicrogridAbstraction a;
  a.up = detail::number(need(j, "up", "abstraction"), "up");
  a.down = detail::number(need(j, "down", "abstraction"), "down");
  const json& grid = need(j, "grid", "abstraction");
  if (!grid.is_array() || grid.empty()) fail(ErrorCode::ParseError, "abstraction grid must be a non-empty array");
  std::vector<double> xs, fs, rs;
  for (const json& p : grid) {
    detail::only_keys(p, {"x", "f", "R"}, "grid point");
    xs.push_back(detail::number(need(p, "x", "grid point"), "x"));
    fs.push_back(detail::number(need(p, "f", "grid point"), "f"));
    rs.push_back(detail::number(need(p, "R", "grid point"), "R"));
  }
  a.cost = abs::PiecewiseLinear(xs, fs);
  a.ramp = abs::PiecewiseLinear(xs, rs);
  a.g_up = detail::vector(need(j, "g_up", "abstraction"), "g_up");
  a.g_down = detail::vector(need(j, "g_down", "abstraction"), "g_down");
  a.cost_at_up = detail::number(need(j, "cost_at_up", "abstraction"), "cost_at_up");
  a.cost_at_down = detail::number(need(j, "cost_at_down", "abstraction"), "cost_at_down");
  a.ramp_at_up = detail::number(need(j, "ramp_at_up", "abstraction"), "ramp_at_up");
  a.ramp_at_down = detail::number(need(j, "ramp_at_down", "abstraction"), "ramp_at_down");
  return a;
}

// --- bids and awards -------------------------------------------------------

inline json bid_json(const market::RegulationBid& b) {
  return {{"id", b.id},
          {"side", market::to_string(b.side)},
          {"capacity", b.capacity},
          {"mileage", b.mileage},
          {"capacity_price", b.capacity_price},
          {"k", b.k}};
}

inline market::RegulationBid parse_bid(const json& j) {
  using detail::need;
  detail::only_keys(j, {"id", "side", "capacity", "mileage", "capacity_price", "k"}, "bid");
  market::RegulationBid b;
  const json& id = need(j, "id", "bid");
  if (!id.is_string()) fail(ErrorCode::ParseError, "bid id must be a string");
  b.id = id.get<std::string>();
  const json& side = need(j, "side", "bid");
  if (side == "up") b.side = market::Side::Up;
  else if (side == "down") b.side = market::Side::Down;
  else fail(ErrorCode::ParseError, "bid side must be up or down");
  b.capacity = detail::number(need(j, "capacity", "bid"), "capacity");
  b.mileage = detail::number(need(j, "mileage", "bid"), "mileage");
  b.capacity_price = detail::number(need(j, "capacity_price", "bid"), "capacity_price");
  b.k = detail::number_or(j, "k", 1.0, "bid");
  return b;
}

/// A bid file holds one bid object or {"bids": [...]}.
inline std::vector<market::RegulationBid> parse_bids(const json& j) {
  std::vector<market::RegulationBid> out;
  if (j.is_object() && j.contains("bids")) {
    detail::only_keys(j, {"bids"}, "bid file");
    if (!j.at("bids").is_array()) fail(ErrorCode::ParseError, "bids must be an array");
    for (const json& b : j.at("bids")) out.push_back(parse_bid(b));
  } else {
    out.push_back(parse_bid(j));
  }
  return out;
}

inline json award_json(const market::MarketAward& a) {
  json rows = json::array();
  for (std::size_t i = 0; i < a.size(); ++i)
    rows.push_back({{"id", a.id[i]}, {"capacity", a.cleared_capacity[i]}, {"mileage", a.cleared_mileage[i]}});
  return {{"clearing_price", a.clearing_price}, {"awards", rows}};
}

inline market::MarketAward parse_award(const json& j) {
  using detail::need;
  detail::only_keys(j, {"clearing_price", "awards"}, "award");
  market::MarketAward a;
  a.clearing_price = detail::number(need(j, "clearing_price", "award"), "clearing_price");
  const json& rows = need(j, "awards", "award");
  if (!rows.is_array()) fail(ErrorCode::ParseError, "awards must be an array");
  for (const json& r : rows) {
    detail::only_keys(r, {"id", "capacity", "mileage"}, "award row");
    const json& id = need(r, "id", "award row");
    if (!id.is_string()) fail(ErrorCode::ParseError, "award id must be a string");
    a.id.push_back(id.get<std::string>());
    a.cleared_capacity.push_back(detail::number(need(r, "capacity", "award row"), "capacity"));
    a.cleared_mileage.push_back(detail::number(need(r, "mileage", "award row"), "mileage"));
  }
  return a;
}

// --- CSV -------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    fail(ErrorCode::ParseError, "missing CSV column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Numeric CSV with a header row. Blank lines are skipped.
inline Table parse_csv(const std::string& text, const std::string& where = "csv") {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      fail(ErrorCode::ParseError, where + ":" + std::to_string(lineno) + ": expected " +
                                      std::to_string(t.header.size()) + " cells");
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || *end != '\0')
        fail(ErrorCode::ParseError, where + ":" + std::to_string(lineno) + ": '" + c + "' is not a number");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) fail(ErrorCode::ParseError, where + ": empty file");
  return t;
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.header.size(); ++c) out += (c ? "," : "") + t.header[c];
  out += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "," : "") + fmt(r[c]);
    out += '\n';
  }
  return out;
}

}  // namespace regnet::io
