// Command-line front end: abstraction, bidding, clearing, tracking,
// comparison and a consensus demo.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "regnet/regnet.hpp"

namespace fs = std::filesystem;
using namespace regnet;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDomain = 2;
constexpr int kInternal = 3;

struct Options {
  std::optional<std::uint64_t> seed;

  // abstract
  std::string network;
  std::optional<double> eps_prime, eps;
  int grid = 101;
  // bid
  std::string abstraction;
  double k = 1.0;
  std::string side = "both";
  std::string id;
  // clear
  std::vector<std::string> bid_files;
  double requirement = 0.0;
  // track
  std::string scenario;
  std::string method = "proposed";
  int trace_stride = 0;
  // compare
  std::string result_a, result_b;
  // demo-consensus
  int n = 12;
  std::string topology = "ring_chords";
  long steps = 100000;
  double dt = 1e-3;
  double nu = 10.0, beta = 10.0;  // Euler-stable at dt = 1e-3 on complete graphs below 200 agents
  int stride = 1000;

  std::string out;
};

/// --seed, then the REGNET_SEED environment variable.
std::optional<std::uint64_t> resolve_seed(const Options& o) {
  if (o.seed) return o.seed;
  if (const char* env = std::getenv("REGNET_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*env == '\0' || *end != '\0') fail(ErrorCode::InvalidArgument, "REGNET_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  return std::nullopt;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) std::cout << text;
  else io::write_text(o.out, text);
}

std::string dump(const io::json& j) { return j.dump(2) + "\n"; }

int run_abstract(const Options& o) {
  const auto nf = io::load_network(o.network);
  const double ep = o.eps_prime.value_or(0.1), e = o.eps.value_or(4.2e-5);
  const auto a = abs::build_abstraction(nf.net, nf.loads, ep, e, {o.grid, {}});
  emit(o, dump(io::abstraction_json(a, ep, e)));
  return kOk;
}

int run_bid(const Options& o) {
  const auto a = io::parse_abstraction(io::read_json(o.abstraction));
  const std::string id = o.id.empty() ? fs::path(o.abstraction).stem().string() : o.id;
  io::json bids = io::json::array();
  for (auto side : {market::Side::Up, market::Side::Down}) {
    if (o.side != "both" && o.side != market::to_string(side)) continue;
    const double capacity = side == market::Side::Up ? -a.up : a.down;
    if (o.side == "both" && !(capacity > 0.0)) continue;
    bids.push_back(io::bid_json(market::make_bid(a, o.k, side, id)));
  }
  if (bids.empty()) fail(ErrorCode::ZeroCapacity, "no regulation capacity on either side");
  emit(o, dump({{"bids", bids}}));
  return kOk;
}

int run_clear(const Options& o) {
  std::vector<market::RegulationBid> up, down;
  for (const auto& f : o.bid_files)
    for (auto& b : io::parse_bids(io::read_json(f))) (b.side == market::Side::Up ? up : down).push_back(std::move(b));
  io::json out = io::json::object();
  if (!up.empty()) out["up"] = io::award_json(market::clear_market(up, o.requirement));
  if (!down.empty()) out["down"] = io::award_json(market::clear_market(down, o.requirement));
  emit(o, dump(out));
  return kOk;
}

int run_track(const Options& o) {
  const auto scenario = harness::load_scenario(o.scenario, resolve_seed(o));
  const auto method = harness::parse_method(o.method);
  std::vector<std::vector<coord::TracePoint>> traces;
  harness::TrackingOptions topts;
  topts.trace_stride = o.trace_stride;
  if (o.trace_stride > 0) topts.traces = &traces;
  const auto result = harness::run_tracking(scenario, method, topts);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  io::write_text(dir / ("result_" + std::string(harness::to_string(method)) + ".csv"),
                 io::to_csv(harness::result_table(result)));
  for (std::size_t k = 0; k < traces.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "instant_%03zu.csv", k);
    io::write_text(dir / "trace" / name, io::to_csv(harness::trace_table(traces[k])));
  }
  double rms = 0.0;
  for (const auto& r : result.instants) rms += r.residual * r.residual;
  if (result.size() > 0) rms = std::sqrt(rms / static_cast<double>(result.size()));
  std::cout << "method: " << harness::to_string(method) << "\n"
            << "instants: " << result.size() << "\n"
            << "cumulative cost: " << io::fmt(result.cumulative_cost()) << "\n"
            << "rms residual: " << io::fmt(rms) << "\n";
  return kOk;
}

int run_compare(const Options& o) {
  const auto a = harness::result_from_table(io::parse_csv(io::read_text(o.result_a), o.result_a));
  const auto b = harness::result_from_table(io::parse_csv(io::read_text(o.result_b), o.result_b));
  const auto c = harness::compare(a, b);
  const std::string text = harness::summary_text(c, fs::path(o.result_a).stem().string(),
                                                 fs::path(o.result_b).stem().string());
  std::cout << text;
  if (!o.out.empty()) {
    io::write_text(fs::path(o.out) / "summary.txt", text);
    io::write_text(fs::path(o.out) / "comparison.csv", io::to_csv(harness::comparison_table(c)));
  }
  return kOk;
}

// Dynamic average consensus on constant inputs drawn from the seed:
// step,t,z_1..z_n,average,max_error
int run_demo(const Options& o) {
  if (o.n < 1 || o.steps < 0 || !(o.dt > 0.0) || o.stride < 1)
    fail(ErrorCode::InvalidArgument, "demo needs n >= 1, steps >= 0, dt > 0 and stride >= 1");
  const auto g = harness::topology_from(o.topology, o.n);
  if (!graph::is_strongly_connected(g) || !graph::is_weight_balanced(g))
    fail(ErrorCode::GraphHypothesisViolated, "communication graph must be strongly connected and weight-balanced");
  const Eigen::MatrixXd L = graph::laplacian(g);
  std::mt19937_64 rng(resolve_seed(o).value_or(0));
  std::uniform_real_distribution<double> draw(-1.0, 1.0);
  Eigen::VectorXd u(o.n);
  for (int i = 0; i < o.n; ++i) u(i) = draw(rng);
  const double avg = u.mean();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(o.n);
  Eigen::VectorXd z = zero, v = zero;
  io::Table t;
  t.header = {"step", "t"};
  for (int i = 1; i <= o.n; ++i) t.header.push_back("z_" + std::to_string(i));
  t.header.emplace_back("average");
  t.header.emplace_back("max_error");
  auto record = [&](long step) {
    std::vector<double> row = {static_cast<double>(step), static_cast<double>(step) * o.dt};
    for (int i = 0; i < o.n; ++i) row.push_back(z(i));
    row.push_back(avg);
    row.push_back((z.array() - avg).abs().maxCoeff());
    t.rows.push_back(std::move(row));
  };
  record(0);
  for (long s = 1; s <= o.steps; ++s) {
    std::tie(z, v) = coord::dac_step(z, v, u, zero, L, o.nu, o.beta, o.dt);
    if (s % o.stride == 0 || s == o.steps) record(s);
  }
  emit(o, io::to_csv(t));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Microgrid frequency-regulation toolkit"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--seed", o.seed, "Random seed (falls back to REGNET_SEED)");

  auto* abstract = app.add_subcommand("abstract", "Capacity, cost and ramp-rate abstraction of a microgrid");
  abstract->add_option("network", o.network, "Network JSON")->required()->check(CLI::ExistingFile);
  abstract->add_option("--eps-prime", o.eps_prime, "Tie-power violation probability (default 0.1)");
  abstract->add_option("--eps", o.eps, "Per-line violation probability (default 4.2e-5)");
  abstract->add_option("--grid", o.grid, "Odd number of regulation grid points")->capture_default_str();
  abstract->add_option("-o,--out", o.out, "Output file (default stdout)");

  auto* bid = app.add_subcommand("bid", "Regulation bids from an abstraction");
  bid->add_option("abstraction", o.abstraction, "Abstraction JSON")->required()->check(CLI::ExistingFile);
  bid->add_option("--k", o.k, "Mileage period constant")->capture_default_str();
  bid->add_option("--side", o.side, "up, down or both")->check(CLI::IsMember({"up", "down", "both"}))->capture_default_str();
  bid->add_option("--id", o.id, "Bid id (default: file stem)");
  bid->add_option("-o,--out", o.out, "Output file (default stdout)");

  auto* clear = app.add_subcommand("clear", "Uniform-price capacity clearing");
  clear->add_option("bids", o.bid_files, "Bid JSON files")->required()->check(CLI::ExistingFile);
  clear->add_option("--requirement", o.requirement, "Capacity requirement per side, kW")->required();
  clear->add_option("-o,--out", o.out, "Output file (default stdout)");

  auto* track = app.add_subcommand("track", "Track a regulation signal over a scenario");
  track->add_option("scenario", o.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  track->add_option("--method", o.method, "proposed or current")->check(CLI::IsMember({"proposed", "current"}))->capture_default_str();
  track->add_option("--trace-stride", o.trace_stride, "Write coordination traces every N steps");
  track->add_option("-o,--out", o.out, "Output directory (default .)");

  auto* compare = app.add_subcommand("compare", "Compare two tracking results");
  compare->add_option("a", o.result_a, "First result CSV")->required()->check(CLI::ExistingFile);
  compare->add_option("b", o.result_b, "Second result CSV")->required()->check(CLI::ExistingFile);
  compare->add_option("-o,--out", o.out, "Directory for summary.txt and comparison.csv");

  auto* demo = app.add_subcommand("demo-consensus", "Dynamic average consensus on constant inputs");
  demo->add_option("--n", o.n, "Number of agents")->capture_default_str();
  demo->add_option("--topology", o.topology, "ring, ring_chords, undirected_ring or complete")->capture_default_str();
  demo->add_option("--steps", o.steps, "Euler steps")->capture_default_str();
  demo->add_option("--dt", o.dt, "Step size")->capture_default_str();
  demo->add_option("--nu", o.nu, "Consensus gain nu")->capture_default_str();
  demo->add_option("--beta", o.beta, "Consensus gain beta")->capture_default_str();
  demo->add_option("--stride", o.stride, "Steps between trace rows")->capture_default_str();
  demo->add_option("-o,--out", o.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kOk;
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*abstract) return run_abstract(o);
    if (*bid) return run_bid(o);
    if (*clear) return run_clear(o);
    if (*track) return run_track(o);
    if (*compare) return run_compare(o);
    if (*demo) return run_demo(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e.code()) ? kUsage : kDomain;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
