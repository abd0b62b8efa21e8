#pragma once

// Supply-function bids x_n = alpha * lambda + beta_n with a common slope,
// cleared pay-as-clear so that the allocations sum to x_tot.

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "flexmarket/error.hpp"

namespace flexmarket::market {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Bid {
  int consumer_id = 0;
  double beta = 0.0;   // kWh
  double alpha = 0.0;  // kWh per ($/kWh)
};

struct ClearingResult {
  double lambda = 0.0;
  VectorXd x;
};

namespace detail {
inline void require_game_size(Index n) {
  require(n >= 2, ErrorKind::game_condition, "the game needs at least two active consumers, got " + std::to_string(n));
}
}  // namespace detail

inline double clearing_price(const VectorXd& beta, double alpha, double x_tot) {
  detail::require_game_size(beta.size());
  require(alpha > 0.0, ErrorKind::domain, "supply-function slope alpha must be positive");
  return (x_tot - beta.sum()) / (alpha * static_cast<double>(beta.size()));
}

inline VectorXd allocate(const VectorXd& beta, double x_tot) {
  detail::require_game_size(beta.size());
  const double share = (x_tot - beta.sum()) / static_cast<double>(beta.size());
  return (beta.array() + share).matrix();
}

/// x = A beta + b with A = I - (1/N) 11^T and b = (x_tot / N) 1.
inline std::pair<MatrixXd, VectorXd> allocation_matrix(Index n, double x_tot) {
  detail::require_game_size(n);
  const double inv = 1.0 / static_cast<double>(n);
  MatrixXd A = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, inv);
  VectorXd b = VectorXd::Constant(n, x_tot * inv);
  return {std::move(A), std::move(b)};
}

inline ClearingResult clear(const std::vector<Bid>& bids, double x_tot) {
  detail::require_game_size(static_cast<Index>(bids.size()));
  const double alpha = bids.front().alpha;
  VectorXd beta(static_cast<Index>(bids.size()));
  for (std::size_t i = 0; i < bids.size(); ++i) {
    require(bids[i].alpha == alpha, ErrorKind::contract, "all bids in a clearing must share one slope");
    beta(static_cast<Index>(i)) = bids[i].beta;
  }
  return {clearing_price(beta, alpha, x_tot), allocate(beta, x_tot)};
}

}  // namespace flexmarket::market
