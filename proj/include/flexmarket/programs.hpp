#pragma once

// Convex programs built on the DSO feasible set: the Euclidean projection of
// bids onto it, the social-welfare problem, and the shadow problem whose
// optimum is the equilibrium allocation.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/game.hpp"
#include "flexmarket/grid.hpp"
#include "flexmarket/qpsolve.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::qp {

namespace detail {

inline void append_shifted(std::vector<Triplet>& t, const SparseMatrix& M, Index row0, Index col0) {
  for (Index k = 0; k < M.outerSize(); ++k)
    for (SparseMatrix::InnerIterator itr(M, k); itr; ++itr) t.emplace_back(row0 + itr.row(), col0 + itr.col(), itr.value());
}

/// Rewrites the network block in energy units: every network variable is
/// divided by the kWh-to-pu factor and every feasible-set row multiplied by
/// it. Allocations then enter the balance rows with unit weight and the
/// multipliers of line limits stay on the scale of the cost gradient.
/// Voltages enter the flow rows only through differences, so they are
/// carried as deviations from 1 pu.
inline void to_energy_units(ConvexProgram& p, const grid::FeasibleSet& fs, Index col0) {
  if (!fs.network) return;
  const double k = fs.kwh_to_pu;
  const Index m_fs = fs.equality.rows();
  const Index first = col0 + fs.n_players, last = col0 + fs.n_vars;
  auto network = [&](Index c) { return c >= first && c < last; };
  for (Index c = 0; c < p.A_eq.outerSize(); ++c)
    for (SparseMatrix::InnerIterator itr(p.A_eq, c); itr; ++itr) {
      if (network(itr.col())) itr.valueRef() *= k;
      if (itr.row() < m_fs) itr.valueRef() /= k;
    }
  p.b_eq.head(m_fs) /= k;
  for (Index c = first; c < last; ++c) {
    const double shift = c >= col0 + fs.v && c < col0 + fs.p_lines ? 1.0 : 0.0;
    p.lower(c) = (p.lower(c) - shift) / k;
    p.upper(c) = (p.upper(c) - shift) / k;
  }
  for (auto& d : p.disks) d.radius /= k;
}

}  // namespace detail

/// Projection of bid vectors onto the DSO-held set. Variables are
/// [ beta (N) | feasible-set variables ], linked by x = A beta + b, with the
/// network block in energy units. The solver state persists between calls,
/// so consecutive projections warm-start.
class PsiProjector {
 public:
  PsiProjector(const grid::FeasibleSet& fs, double x_tot, Settings settings = {})
      : n_(fs.n_players), solver_(build(fs, x_tot), settings) {}

  struct Result {
    VectorXd beta;
    Solution solution;
  };

  Result project(const VectorXd& beta_tilde) {
    require(beta_tilde.size() == n_, ErrorKind::contract, "projection: one bid per player");
    VectorXd q = VectorXd::Zero(solver_.program().size());
    q.head(n_) = -beta_tilde;
    solver_.set_linear_term(q);
    Result r;
    r.solution = solver_.solve();
    r.beta = r.solution.x.head(n_);
    return r;
  }

  const ConvexProgram& program() const { return solver_.program(); }
  Settings& settings() { return solver_.settings(); }

 private:
  static ConvexProgram build(const grid::FeasibleSet& fs, double x_tot) {
    const Index N = fs.n_players;
    require(N >= 2, ErrorKind::game_condition, "projection needs at least two players");
    const Index n = N + fs.n_vars;
    const Index m_fs = fs.equality.rows();
    ConvexProgram p;
    std::vector<Triplet> t;
    for (Index i = 0; i < N; ++i) t.emplace_back(i, i, 1.0);
    p.P.resize(n, n);
    p.P.setFromTriplets(t.begin(), t.end());
    p.q = VectorXd::Zero(n);

    t.clear();
    detail::append_shifted(t, fs.equality, 0, N);
    // x_i - beta_i + (1/N) sum_j beta_j = x_tot / N
    const double inv = 1.0 / static_cast<double>(N);
    for (Index i = 0; i < N; ++i) {
      const Index row = m_fs + i;
      t.emplace_back(row, N + i, 1.0);
      for (Index j = 0; j < N; ++j) t.emplace_back(row, j, (i == j ? -1.0 : 0.0) + inv);
    }
    p.A_eq.resize(m_fs + N, n);
    p.A_eq.setFromTriplets(t.begin(), t.end());
    p.b_eq.resize(m_fs + N);
    p.b_eq.head(m_fs) = fs.equality_rhs;
    p.b_eq.tail(N).setConstant(x_tot * inv);

    p.lower = VectorXd::Constant(n, -kInf);
    p.upper = VectorXd::Constant(n, kInf);
    p.lower.tail(fs.n_vars) = fs.lower;
    p.upper.tail(fs.n_vars) = fs.upper;
    for (const auto& d : fs.disks) p.disks.push_back({d.i + N, d.j + N, d.radius});
    detail::to_energy_units(p, fs, N);
    return p;
  }

  Index n_;
  AdmmSolver solver_;
};

/// argmin over z in the DSO set of ||z - beta_tilde||.
inline VectorXd project_onto_psi(const VectorXd& beta_tilde, const grid::FeasibleSet& fs, double x_tot,
                                 const Settings& settings = {}) {
  PsiProjector proj(fs, x_tot, settings);
  auto r = proj.project(beta_tilde);
  require(r.solution.status == Status::optimal, ErrorKind::solver,
          std::string("projection-failure: solver status ") + to_string(r.solution.status));
  return r.beta;
}

struct AllocationResult {
  VectorXd x;
  double price = 0.0;  // multiplier of the balance constraint, $/kWh
  Solution solution;
  ConvexProgram program;
};

namespace detail {

/// min sum_n 0.5 (a_n + extra) x_n^2 + b_n x_n over the feasible set with
/// 0 <= x <= x_hat and sum x = x_tot.
inline ConvexProgram allocation_program(const std::vector<ConsumerProfile>& consumers, const grid::FeasibleSet& fs,
                                        double x_tot, double extra_curvature) {
  const auto players = active_only(consumers);
  const Index N = fs.n_players;
  const Index n = fs.n_vars;
  const Index m_fs = fs.equality.rows();
  ConvexProgram p;
  std::vector<Triplet> t;
  p.q = VectorXd::Zero(n);
  for (Index i = 0; i < N; ++i) {
    const auto& c = players[static_cast<std::size_t>(i)];
    if (c.a + extra_curvature != 0.0) t.emplace_back(i, i, c.a + extra_curvature);
    p.q(i) = c.b_lin;
  }
  p.P.resize(n, n);
  p.P.setFromTriplets(t.begin(), t.end());

  t.clear();
  append_shifted(t, fs.equality, 0, 0);
  for (Index i = 0; i < N; ++i) t.emplace_back(m_fs, i, 1.0);
  p.A_eq.resize(m_fs + 1, n);
  p.A_eq.setFromTriplets(t.begin(), t.end());
  p.b_eq.resize(m_fs + 1);
  p.b_eq.head(m_fs) = fs.equality_rhs;
  p.b_eq(m_fs) = x_tot;

  p.lower = fs.lower;
  p.upper = fs.upper;
  for (Index i = 0; i < N; ++i) {
    p.lower(i) = std::max(p.lower(i), 0.0);
    p.upper(i) = std::min(p.upper(i), players[static_cast<std::size_t>(i)].x_hat);
  }
  p.disks = fs.disks;
  to_energy_units(p, fs, 0);
  return p;
}

inline AllocationResult solve_allocation(const std::vector<ConsumerProfile>& consumers,
                                         const grid::DistributionNetwork& net, const MarketScenario& scenario,
                                         double extra_curvature, const Settings& settings, const char* what) {
  const auto players = active_only(consumers);
  double cap = 0.0;
  for (const auto& c : players) cap += c.x_hat;
  require(cap >= scenario.x_tot, ErrorKind::solver,
          std::string(what) + " infeasible: flexibility caps (sum x_hat = " + std::to_string(cap) +
              ") cannot cover x_tot = " + std::to_string(scenario.x_tot));

  const auto fs = grid::assemble_feasible_set(net, consumers, scenario);
  AllocationResult r;
  r.program = allocation_program(consumers, fs, scenario.x_tot, extra_curvature);
  r.solution = solve(r.program, settings);
  if (r.solution.status != Status::optimal) {
    std::string block = "unknown block";
    if (r.solution.status == Status::infeasible) {
      block = "network security constraints";
      if (!scenario.network_enabled) block = "flexibility caps and balance";
    }
    throw Error(ErrorKind::solver, std::string(what) + " failed (" + to_string(r.solution.status) + ") at " + block);
  }
  r.x = r.solution.x.head(fs.n_players);
  r.price = -r.solution.y_eq(fs.equality.rows());
  return r;
}

}  // namespace detail

/// Social optimum: minimise the true total cost.
inline AllocationResult solve_welfare(const std::vector<ConsumerProfile>& consumers,
                                      const grid::DistributionNetwork& net, const MarketScenario& scenario,
                                      const Settings& settings = {}) {
  return detail::solve_allocation(consumers, net, scenario, 0.0, settings, "welfare problem");
}

/// Shadow problem: costs inflated by x^2 / (2 alpha (N - 1)).
inline AllocationResult solve_shadow(const std::vector<ConsumerProfile>& consumers,
                                     const grid::DistributionNetwork& net, const MarketScenario& scenario,
                                     const Settings& settings = {}) {
  const auto players = active_only(consumers);
  require(players.size() >= 2, ErrorKind::game_condition, "the shadow problem needs at least two active consumers");
  const double alpha = game::resolve_alpha(scenario, players);
  const double extra = 1.0 / (alpha * static_cast<double>(players.size() - 1));
  return detail::solve_allocation(consumers, net, scenario, extra, settings, "shadow problem");
}

}  // namespace flexmarket::qp
