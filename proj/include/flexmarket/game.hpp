#pragma once

/**
 * The bidding game among active consumers. Each consumer picks the
 * intercept beta_n of its supply function; the clearing map turns bids into
 * allocations. This header holds the cost model, the pseudo-gradient of the
 * game, the constants that govern existence and step sizes, and the
 * efficiency metrics.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/market.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::game {

using Eigen::Index;
using Eigen::VectorXd;

inline double cost(const ConsumerProfile& p, double x) { return 0.5 * p.a * x * x + p.b_lin * x; }

/// C'(x) extended affinely beyond [0, x_hat]; iterates may leave the box
/// before the flexibility duals become active.
inline double marginal_cost_extended(const ConsumerProfile& p, double x) { return p.a * x + p.b_lin; }

inline double marginal_cost(const ConsumerProfile& p, double x) {
  require(x >= 0.0 && x <= p.x_hat, ErrorKind::domain,
          "marginal_cost: x = " + std::to_string(x) + " outside [0, " + std::to_string(p.x_hat) + "]");
  return marginal_cost_extended(p, x);
}

/// Inflated cost whose minimisation reproduces the equilibrium allocation:
/// D(x) = C(x) + x^2 / (2 alpha (N - 1)).
inline double shadow_cost(const ConsumerProfile& p, double x, double alpha, Index n) {
  return cost(p, x) + x * x / (2.0 * alpha * static_cast<double>(n - 1));
}

inline double total_cost(const std::vector<ConsumerProfile>& players, const VectorXd& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < players.size(); ++i) s += cost(players[i], x(static_cast<Index>(i)));
  return s;
}

/// F(beta): derivative of each consumer's net cost in its own bid, with the
/// price and allocation substituted from the clearing rule.
inline VectorXd pseudo_gradient(const VectorXd& beta, const std::vector<ConsumerProfile>& players, double alpha,
                                double x_tot) {
  const Index n = beta.size();
  require(static_cast<Index>(players.size()) == n, ErrorKind::contract, "pseudo_gradient: one bid per player");
  const VectorXd x = market::allocate(beta, x_tot);
  const double N = static_cast<double>(n);
  const double coupling = (beta.sum() - x_tot) * (N - 2.0);
  VectorXd f(n);
  for (Index i = 0; i < n; ++i)
    f(i) = marginal_cost_extended(players[static_cast<std::size_t>(i)], x(i)) * (N - 1.0) / N +
           (coupling + N * beta(i)) / (alpha * N * N);
  return f;
}

struct GameConstants {
  Index n = 0;
  double alpha = 0.0;
  double kappa = 0.0;    // Lipschitz constant of every C'_n
  double eta_f = 0.0;    // strong monotonicity of F
  double kappa_f = 0.0;  // Lipschitz constant of F
};

/// Largest curvature max_n a_n, or the override when it dominates it.
inline double lipschitz_kappa(const std::vector<ConsumerProfile>& players, std::optional<double> override_kappa = {}) {
  double k = 0.0;
  for (const auto& p : players) {
    require(p.a >= 0.0, ErrorKind::domain, "cost curvature must be nonnegative");
    k = std::max(k, p.a);
  }
  if (override_kappa) {
    require(*override_kappa >= k, ErrorKind::game_condition,
            "kappa override " + std::to_string(*override_kappa) + " is below max curvature " + std::to_string(k));
    return *override_kappa;
  }
  return k;
}

inline GameConstants constants(Index n, double alpha, double kappa) {
  require(n >= 2, ErrorKind::game_condition, "the game needs at least two active consumers");
  require(alpha > 0.0, ErrorKind::domain, "alpha must be positive");
  require(kappa >= 0.0, ErrorKind::domain, "kappa must be nonnegative");
  const double N = static_cast<double>(n);
  GameConstants c;
  c.n = n;
  c.alpha = alpha;
  c.kappa = kappa;
  c.eta_f = 1.0 / (alpha * N) - kappa * (N - 1.0) / (2.0 * N);
  c.kappa_f = (N - 1.0) / N * (kappa + 1.0 / alpha);
  if (alpha * kappa * (N - 1.0) >= 2.0 || c.eta_f <= 0.0) {
    std::ostringstream os;
    os << "alpha = " << alpha << " violates the unique-equilibrium condition alpha < 2/(kappa (N-1)) = "
       << 2.0 / (kappa * (N - 1.0));
    throw Error(ErrorKind::game_condition, os.str());
  }
  return c;
}

inline GameConstants constants(const std::vector<ConsumerProfile>& players, double alpha,
                               std::optional<double> override_kappa = {}) {
  return constants(static_cast<Index>(players.size()), alpha, lipschitz_kappa(players, override_kappa));
}

/// alpha = delta * 2 / (kappa (N - 1)) for delta in (0, 1).
inline double alpha_from_delta(double delta, double kappa, Index n) {
  require(delta > 0.0 && delta < 1.0, ErrorKind::game_condition,
          "delta must lie in the open interval (0, 1), got " + std::to_string(delta));
  require(kappa > 0.0, ErrorKind::game_condition, "delta parametrisation needs kappa > 0");
  require(n >= 2, ErrorKind::game_condition, "the game needs at least two active consumers");
  return delta * 2.0 / (kappa * static_cast<double>(n - 1));
}

/// The scenario's slope, given directly or through delta.
inline double resolve_alpha(const MarketScenario& s, const std::vector<ConsumerProfile>& players) {
  require(s.alpha.has_value() != s.delta.has_value(), ErrorKind::schema,
          "scenario must give exactly one of alpha and delta");
  if (s.alpha) {
    require(*s.alpha > 0.0, ErrorKind::game_condition, "alpha must be positive");
    return *s.alpha;
  }
  return alpha_from_delta(*s.delta, lipschitz_kappa(players, s.kappa), static_cast<Index>(players.size()));
}

struct StepSizes {
  double rho = 0.0;
  double nu = 0.0;
};

/// Equal primal and dual steps c = 0.9 c*, with c* the positive root of
/// c^2 + K c - 1 = 0, K = kappa_F^2 / (2 eta_F).
inline StepSizes max_step_sizes(const GameConstants& c, double margin = 0.9) {
  require(c.eta_f > 0.0, ErrorKind::game_condition, "step sizes need eta_F > 0");
  require(margin > 0.0 && margin < 1.0, ErrorKind::domain, "step-size margin must lie in (0, 1)");
  const double K = c.kappa_f * c.kappa_f / (2.0 * c.eta_f);
  // Stable form of (-K + sqrt(K^2 + 4)) / 2.
  const double root = 2.0 / (K + std::sqrt(K * K + 4.0));
  return {margin * root, margin * root};
}

inline bool step_sizes_admissible(const GameConstants& c, const StepSizes& s) {
  return s.rho > 0.0 && s.nu > 0.0 && c.eta_f > 0.0 &&
         c.kappa_f * c.kappa_f / (2.0 * c.eta_f) < 1.0 / s.rho - s.nu;
}

inline void validate_step_sizes(const GameConstants& c, const StepSizes& s) {
  if (!step_sizes_admissible(c, s)) {
    std::ostringstream os;
    os << "step sizes rho = " << s.rho << ", nu = " << s.nu
       << " violate kappa_F^2/(2 eta_F) < 1/rho - nu (lhs = " << c.kappa_f * c.kappa_f / (2.0 * c.eta_f)
       << ", rhs = " << 1.0 / s.rho - s.nu << ")";
    throw Error(ErrorKind::game_condition, os.str());
  }
}

struct PoaResult {
  double cost_equilibrium = 0.0;
  double cost_optimum = 0.0;
  double poa = 0.0;
  double bound = 0.0;
  bool within_bound = false;
};

/// PoA = cost_eq / cost_opt with the upper bound
/// 1 + sum(x_opt^2) / (2 alpha (N - 1) cost_opt).
inline PoaResult poa(double cost_equilibrium, double cost_optimum, double sum_sq_optimum, double alpha, Index n) {
  require(cost_optimum > 0.0 && cost_equilibrium > 0.0, ErrorKind::degenerate,
          "PoA is undefined when a total cost is not positive");
  require(n >= 2 && alpha > 0.0, ErrorKind::contract, "PoA needs N >= 2 and alpha > 0");
  PoaResult r;
  r.cost_equilibrium = cost_equilibrium;
  r.cost_optimum = cost_optimum;
  r.poa = cost_equilibrium / cost_optimum;
  r.bound = 1.0 + sum_sq_optimum / (2.0 * alpha * static_cast<double>(n - 1) * cost_optimum);
  r.within_bound = r.poa < r.bound;
  return r;
}

inline PoaResult poa(const std::vector<ConsumerProfile>& players, const VectorXd& x_equilibrium,
                     const VectorXd& x_optimum, double alpha) {
  require(x_optimum.squaredNorm() > 0.0, ErrorKind::degenerate, "optimal flexibility is all zero");
  return poa(total_cost(players, x_equilibrium), total_cost(players, x_optimum), x_optimum.squaredNorm(), alpha,
             static_cast<Index>(players.size()));
}

}  // namespace flexmarket::game
