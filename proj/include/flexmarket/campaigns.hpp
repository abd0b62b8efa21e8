#pragma once

// Experiment campaigns: the efficiency / convergence sweep over (N, delta)
// and the security comparison with and without network rows.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/gne.hpp"
#include "flexmarket/grid.hpp"
#include "flexmarket/programs.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::campaign {

using Eigen::Index;
using Eigen::VectorXd;

/// Stopping tolerance of sweep cells unless the caller overrides it.
inline constexpr double kSweepStopTol = 1e-5;

/// Draws `count` consumers from one seeded stream: a in [0.003, 0.005] $/kWh^2,
/// b in [0.35, 0.45] $/kWh, x_hat in [0.25, 0.6] x_tot. Smaller games use a
/// prefix of the same draws, so cells with different N share players.
inline std::vector<ConsumerProfile> draw_players(int count, double x_tot, std::uint64_t seed, int bus_id = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a(0.003, 0.005), b(0.35, 0.45), cap(0.25, 0.6);
  std::vector<ConsumerProfile> out;
  for (int i = 0; i < count; ++i) {
    ConsumerProfile c;
    c.id = i + 1;
    c.bus_id = bus_id;
    c.a = a(rng);
    c.b_lin = b(rng);
    c.x_hat = cap(rng) * x_tot;
    c.active = true;
    out.push_back(c);
  }
  return out;
}

struct SweepCell {
  int n = 0;
  double delta = 0.0;
  bool ok = false;
  std::string error;  // set when the cell is flagged
  double alpha = 0.0;
  double price = 0.0;          // equilibrium clearing price from the run
  double welfare_price = 0.0;  // multiplier of the balance row at the social optimum
  double cost_equilibrium = 0.0;
  double cost_optimum = 0.0;
  double poa = 0.0;
  double bound = 0.0;
  double oracle_gap = 0.0;
  std::uint64_t iterations = 0;
  std::string termination;
};

struct SweepOptions {
  double stop_tol = kSweepStopTol;
  std::uint64_t max_iter = 100000;
  unsigned jobs = 1;
};

/// One cell: the algorithm at the requested tolerance, then the welfare and
/// shadow oracles. PoA compares the shadow optimum, which is the exact
/// equilibrium allocation, with the social optimum. Network rows are off.
inline SweepCell run_cell(const MarketScenario& base, const grid::DistributionNetwork& net,
                          const std::vector<ConsumerProfile>& pool, int n, double delta, const SweepOptions& opt) {
  SweepCell cell;
  cell.n = n;
  cell.delta = delta;
  try {
    require(n >= 2 && n <= static_cast<int>(pool.size()), ErrorKind::contract, "sweep cell size out of range");
    const std::vector<ConsumerProfile> players(pool.begin(), pool.begin() + n);
    MarketScenario s = base;
    s.network_enabled = false;
    s.alpha.reset();
    s.delta = delta;
    s.rho.reset();
    s.nu.reset();
    s.beta0.clear();
    s.gamma0.clear();
    require(delta > 0.0 && delta < 1.0, ErrorKind::game_condition, "sweep delta outside (0, 1)");

    gne::RunOptions ro;
    ro.stop_tol = opt.stop_tol;
    ro.max_iter = opt.max_iter;
    ro.message_log = 0;
    const auto rep = gne::run(s, net, players, ro);
    cell.alpha = rep.constants.alpha;
    cell.price = rep.lambda_star;
    cell.iterations = rep.iterations;
    cell.termination = gne::to_string(rep.termination);

    const auto shadow = qp::solve_shadow(players, net, s);
    const auto welfare = qp::solve_welfare(players, net, s);
    const auto p = game::poa(players, shadow.x, welfare.x, cell.alpha);
    cell.welfare_price = welfare.price;
    cell.cost_equilibrium = p.cost_equilibrium;
    cell.cost_optimum = p.cost_optimum;
    cell.poa = p.poa;
    cell.bound = p.bound;
    cell.oracle_gap = (rep.x_star - shadow.x).norm() / shadow.x.norm();
    cell.ok = rep.termination == gne::Termination::converged;
    if (!cell.ok) cell.error = "algorithm stopped: " + cell.termination;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

/// Runs every (N, delta) cell, at most `jobs` at a time. Rows come back in
/// grid order (N outer, delta inner) whatever the scheduling.
inline std::vector<SweepCell> sweep(const MarketScenario& base, const grid::DistributionNetwork& net,
                                    const SweepGrid& grid_spec, std::uint64_t seed, const SweepOptions& opt) {
  require(!grid_spec.n_values.empty() && !grid_spec.delta_values.empty(), ErrorKind::schema,
          "sweep grid needs at least one N and one delta value");
  int n_max = 0;
  for (int n : grid_spec.n_values) {
    require(n >= 2, ErrorKind::schema, "sweep N values must be at least 2");
    n_max = std::max(n_max, n);
  }
  int bus_id = net.buses().size() > 1 ? net.buses()[1].id : 1;
  const auto pool = draw_players(n_max, base.x_tot, seed, bus_id);

  std::vector<std::pair<int, double>> cells;
  for (int n : grid_spec.n_values)
    for (double d : grid_spec.delta_values) cells.emplace_back(n, d);
  std::vector<SweepCell> out(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++)
      out[k] = run_cell(base, net, pool, cells[k].first, cells[k].second, opt);
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> threads;
  for (unsigned j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return out;
}

/// Network quantities of one allocation checked against the limits.
struct NetworkCheck {
  grid::PowerFlowState state;
  VectorXd loading;  // |S_l| per line
  double worst_voltage_violation = 0.0;  // pu, 0 when within bounds
  double worst_overload = 0.0;           // pu above z, 0 when within ratings
};

inline NetworkCheck check_network(const grid::DistributionNetwork& net, const std::vector<ConsumerProfile>& consumers,
                                  const VectorXd& x, const MarketScenario& s) {
  NetworkCheck c;
  c.state = grid::state_for_allocation(net, consumers, x, s);
  const Index L = static_cast<Index>(net.line_count());
  c.loading.resize(L);
  for (Index l = 0; l < L; ++l) {
    c.loading(l) = std::hypot(c.state.p_lines(l), c.state.q_lines(l));
    c.worst_overload = std::max(c.worst_overload, c.loading(l) - net.lines()[static_cast<std::size_t>(l)].z);
  }
  // The slack voltage is pinned to 1 pu; its file bounds do not apply.
  for (std::size_t b = 1; b < net.buses().size(); ++b) {
    const auto& bus = net.buses()[b];
    const double v = c.state.v(static_cast<Index>(b));
    c.worst_voltage_violation = std::max({c.worst_voltage_violation, bus.vmin - v, v - bus.vmax});
  }
  return c;
}

struct SecurityRun {
  gne::SolveReport report;
  NetworkCheck check;
  double balance_error = 0.0;  // |1'x - x_tot| / x_tot
};

struct SecurityComparison {
  std::string variant;
  std::vector<grid::Bus> buses;
  std::vector<grid::Line> lines;
  SecurityRun unconstrained;
  SecurityRun constrained;
};

/// Solves one scenario with network rows off and on, and evaluates both
/// allocations on the network.
inline SecurityComparison compare_security(const std::string& variant, const MarketScenario& scenario,
                                           const grid::DistributionNetwork& net,
                                           const std::vector<ConsumerProfile>& consumers,
                                           const gne::RunOptions& opt) {
  SecurityComparison out;
  out.variant = variant;
  out.buses = net.buses();
  out.lines = net.lines();
  for (bool network : {false, true}) {
    MarketScenario s = scenario;
    s.network_enabled = network;
    SecurityRun r;
    r.report = gne::run(s, net, consumers, opt);
    require(r.report.termination == gne::Termination::converged, ErrorKind::solver,
            variant + (network ? " constrained" : " unconstrained") + " run did not converge (" +
                gne::to_string(r.report.termination) + (r.report.failure.empty() ? "" : ": " + r.report.failure) +
                ")");
    r.check = check_network(net, consumers, r.report.x_star, s);
    r.balance_error = std::abs(r.report.x_star.sum() - s.x_tot) / s.x_tot;
    (network ? out.constrained : out.unconstrained) = std::move(r);
  }
  return out;
}

}  // namespace flexmarket::campaign
