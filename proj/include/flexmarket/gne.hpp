#pragma once

/**
 * Semi-decentralised equilibrium seeking. Three kinds of agent exchange
 * messages in synchronous rounds:
 *
 *   consumers  hold their cost, cap and dual; send primary bids and duals
 *   BRP        holds x_tot; clears the price and aggregates duals
 *   DSO        holds the network; projects primary bids onto its set
 *
 * Every message passes through a MessageBus that checks the route against
 * the information partition, so a run can be audited afterwards.
 */

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/game.hpp"
#include "flexmarket/grid.hpp"
#include "flexmarket/market.hpp"
#include "flexmarket/programs.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::gne {

using Eigen::Index;
using Eigen::VectorXd;

enum class Role { consumer, brp, dso };
enum class Payload { bid, corrected_bid, price, dual, dual_sum };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::consumer: return "consumer";
    case Role::brp: return "brp";
    case Role::dso: return "dso";
  }
  return "?";
}

inline const char* to_string(Payload p) {
  switch (p) {
    case Payload::bid: return "bid";
    case Payload::corrected_bid: return "corrected_bid";
    case Payload::price: return "price";
    case Payload::dual: return "dual";
    case Payload::dual_sum: return "dual_sum";
  }
  return "?";
}

struct Message {
  std::uint64_t round = 0;
  Role sender = Role::brp;
  Index sender_id = -1;  // player index for consumers, -1 otherwise
  Role receiver = Role::brp;
  Index receiver_id = -1;
  Payload kind = Payload::price;
  Index subject = -1;  // player a per-consumer value belongs to; -1 for aggregates and vectors
  std::vector<double> values;
};

/// Routes allowed by the information partition. Consumers only ever see
/// public aggregates and their own corrected bid; the BRP and DSO only see
/// bids, prices and duals, never costs, caps or the other side's data.
inline bool route_allowed(const Message& m) {
  switch (m.receiver) {
    case Role::consumer:
      if (m.sender != Role::brp) return false;
      if (m.kind == Payload::price || m.kind == Payload::dual_sum) return m.subject < 0 && m.values.size() == 1;
      if (m.kind == Payload::corrected_bid) return m.subject == m.receiver_id && m.values.size() == 1;
      return false;
    case Role::brp:
      if (m.sender == Role::consumer)
        return (m.kind == Payload::bid || m.kind == Payload::dual) && m.subject == m.sender_id && m.values.size() == 1;
      if (m.sender == Role::dso) return m.kind == Payload::corrected_bid && m.subject < 0;
      return false;
    case Role::dso:
      return m.sender == Role::brp && m.kind == Payload::bid && m.subject < 0;
  }
  return false;
}

class MessageBus {
 public:
  explicit MessageBus(std::size_t keep = 4096) : keep_(keep) {}

  void post(Message m) {
    ++posted_;
    if (!route_allowed(m)) ++violations_;
    if (keep_ == 0) return;
    if (log_.size() == keep_) log_.pop_front();
    log_.push_back(std::move(m));
  }

  std::uint64_t posted() const { return posted_; }
  std::uint64_t violations() const { return violations_; }
  const std::deque<Message>& recent() const { return log_; }

 private:
  std::size_t keep_;
  std::deque<Message> log_;
  std::uint64_t posted_ = 0;
  std::uint64_t violations_ = 0;
};

/// h_n = C'(alpha lambda + beta_n)(N-1)/N + (alpha lambda (2-N) + beta_n)/(alpha N)
///       - dual_sum / N + gamma_n,   and   beta_tilde_n = beta_n - rho_n h_n.
inline double consumer_step(const ConsumerProfile& profile, double beta_n, double lambda, double gamma_n,
                            double dual_sum, const game::GameConstants& c, double rho_n) {
  const double N = static_cast<double>(c.n);
  const double x_n = c.alpha * lambda + beta_n;
  const double h = game::marginal_cost_extended(profile, x_n) * (N - 1.0) / N +
                   (c.alpha * lambda * (2.0 - N) + beta_n) / (c.alpha * N) - dual_sum / N + gamma_n;
  return beta_n - rho_n * h;
}

/// gamma+ = max(0, gamma + nu (2 x_curr - x_prev - x_hat)).
inline double dual_step(double gamma_n, double x_curr, double x_prev, double x_hat, double nu_n) {
  return std::max(0.0, gamma_n + nu_n * (2.0 * x_curr - x_prev - x_hat));
}

class ConsumerAgent {
 public:
  ConsumerAgent(Index index, ConsumerProfile profile, game::GameConstants constants, game::StepSizes steps,
                double beta0, double gamma0)
      : index_(index), profile_(profile), constants_(constants), steps_(steps), beta_(beta0), gamma_(gamma0) {}

  Index index() const { return index_; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  double allocation() const { return x_curr_; }

  void receive_public(double lambda, double dual_sum) {
    lambda_ = lambda;
    dual_sum_ = dual_sum;
  }
  void receive_initial_price(double lambda) {
    lambda_ = lambda;
    x_curr_ = constants_.alpha * lambda + beta_;
  }

  double primary_bid() const {
    return consumer_step(profile_, beta_, lambda_, gamma_, dual_sum_, constants_, steps_.rho);
  }

  void receive_corrected(double beta, double lambda) {
    beta_ = beta;
    lambda_ = lambda;
    x_prev_ = x_curr_;
    x_curr_ = constants_.alpha * lambda + beta;
  }

  double update_dual() {
    gamma_ = dual_step(gamma_, x_curr_, x_prev_, profile_.x_hat, steps_.nu);
    return gamma_;
  }

  void receive_dual_sum(double s) { dual_sum_ = s; }

 private:
  Index index_;
  ConsumerProfile profile_;
  game::GameConstants constants_;
  game::StepSizes steps_;
  double beta_ = 0.0;
  double gamma_ = 0.0;
  double lambda_ = 0.0;
  double dual_sum_ = 0.0;
  double x_prev_ = 0.0;
  double x_curr_ = 0.0;
};

class BrpAgent {
 public:
  BrpAgent(double x_tot, double alpha, Index n) : x_tot_(x_tot), alpha_(alpha), bids_(VectorXd::Zero(n)), duals_(VectorXd::Zero(n)) {}

  void receive_bid(Index n, double v) { bids_(n) = v; }
  void receive_dual(Index n, double v) { duals_(n) = v; }
  const VectorXd& bids() const { return bids_; }

  double clear(const VectorXd& beta) { return market::clearing_price(beta, alpha_, x_tot_); }
  double dual_sum() const { return duals_.sum(); }
  double x_tot() const { return x_tot_; }

 private:
  double x_tot_;
  double alpha_;
  VectorXd bids_;
  VectorXd duals_;
};

class DsoAgent {
 public:
  DsoAgent(const grid::FeasibleSet& fs, double x_tot, qp::Settings settings) : projector_(fs, x_tot, settings) {}

  qp::PsiProjector::Result correct(const VectorXd& primary) { return projector_.project(primary); }

 private:
  qp::PsiProjector projector_;
};

enum class Termination { converged, max_iter, projection_failure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iter: return "max_iter";
    case Termination::projection_failure: return "projection_failure";
  }
  return "?";
}

struct SolveReport {
  VectorXd beta_star;
  VectorXd x_star;
  double lambda_star = 0.0;
  VectorXd gamma_star;
  std::uint64_t iterations = 0;
  Termination termination = Termination::max_iter;
  std::string failure;
  std::vector<double> residuals;  // ||d beta||^2 + ||d gamma||^2 per round
  double final_residual = 0.0;
  double max_balance_error = 0.0;  // |1'x - x_tot| over all rounds
  game::GameConstants constants;
  game::StepSizes steps;
  std::uint64_t messages = 0;
  std::uint64_t message_violations = 0;
  std::uint64_t inner_iterations = 0;
  double seconds = 0.0;
  bool negative_price = false;
  bool outside_cost_domain = false;  // some x_n outside [0, x_hat] at the end

  // Filled by attach_oracles.
  std::optional<VectorXd> x_shadow;
  std::optional<VectorXd> x_welfare;
  std::optional<double> oracle_gap;
  std::optional<double> welfare_price;
  std::optional<game::PoaResult> poa;
};

struct RunOptions {
  double stop_tol = 1e-5;
  std::uint64_t max_iter = 100000;
  std::ostream* trace = nullptr;
  qp::Settings projection{};
  std::size_t message_log = 4096;
};

/// One Algorithm state machine. `iterate` performs a full round and returns
/// the squared step norm ||d beta||^2 + ||d gamma||^2.
class Protocol {
 public:
  Protocol(const MarketScenario& scenario, const grid::DistributionNetwork& net,
           const std::vector<ConsumerProfile>& consumers, const qp::Settings& projection_settings = {},
           std::size_t message_log = 4096)
      : bus_(message_log) {
    players_ = active_only(consumers);
    n_ = static_cast<Index>(players_.size());
    require(n_ >= 2, ErrorKind::game_condition, "the game needs at least two active consumers");
    require(scenario.x_tot > 0.0, ErrorKind::schema, "x_tot must be positive");
    double cap = 0.0;
    for (const auto& p : players_) cap += p.x_hat;
    require(cap >= scenario.x_tot, ErrorKind::game_condition,
            "sum of x_hat (" + std::to_string(cap) + ") is below x_tot (" + std::to_string(scenario.x_tot) + ")");

    const double alpha = game::resolve_alpha(scenario, players_);
    constants_ = game::constants(players_, alpha, scenario.kappa);
    require(scenario.rho.has_value() == scenario.nu.has_value(), ErrorKind::schema,
            "give both rho and nu or neither");
    if (scenario.rho) {
      steps_ = {*scenario.rho, *scenario.nu};
      game::validate_step_sizes(constants_, steps_);
    } else {
      steps_ = game::max_step_sizes(constants_);
    }

    VectorXd beta0 = VectorXd::Zero(n_), gamma0 = VectorXd::Zero(n_);
    if (!scenario.beta0.empty()) {
      require(static_cast<Index>(scenario.beta0.size()) == n_, ErrorKind::schema, "beta0 needs one entry per player");
      beta0 = Eigen::Map<const VectorXd>(scenario.beta0.data(), n_);
    }
    if (!scenario.gamma0.empty()) {
      require(static_cast<Index>(scenario.gamma0.size()) == n_, ErrorKind::schema, "gamma0 needs one entry per player");
      gamma0 = Eigen::Map<const VectorXd>(scenario.gamma0.data(), n_);
      require((gamma0.array() >= 0.0).all(), ErrorKind::schema, "gamma0 must be nonnegative");
    }

    for (Index i = 0; i < n_; ++i)
      consumers_.emplace_back(i, players_[static_cast<std::size_t>(i)], constants_, steps_, beta0(i), gamma0(i));
    brp_ = std::make_unique<BrpAgent>(scenario.x_tot, alpha, n_);
    dso_ = std::make_unique<DsoAgent>(grid::assemble_feasible_set(net, consumers, scenario), scenario.x_tot,
                                      projection_settings);

    // Initialisation round: bids and duals to the BRP, price and dual sum back.
    for (auto& c : consumers_) {
      post(Role::consumer, c.index(), Role::brp, -1, Payload::bid, c.index(), c.beta());
      brp_->receive_bid(c.index(), c.beta());
      post(Role::consumer, c.index(), Role::brp, -1, Payload::dual, c.index(), c.gamma());
      brp_->receive_dual(c.index(), c.gamma());
    }
    lambda_ = brp_->clear(brp_->bids());
    const double dual_sum = brp_->dual_sum();
    for (auto& c : consumers_) {
      post(Role::brp, -1, Role::consumer, c.index(), Payload::price, -1, lambda_);
      post(Role::brp, -1, Role::consumer, c.index(), Payload::dual_sum, -1, dual_sum);
      c.receive_public(lambda_, dual_sum);
      c.receive_initial_price(lambda_);
    }
  }

  double iterate() {
    ++round_;
    const VectorXd beta_old = beta(), gamma_old = gamma();

    // 1. primary bids
    for (auto& c : consumers_) {
      const double bt = c.primary_bid();
      post(Role::consumer, c.index(), Role::brp, -1, Payload::bid, c.index(), bt);
      brp_->receive_bid(c.index(), bt);
    }
    // 2. DSO correction
    const VectorXd primary = brp_->bids();
    post_vector(Role::brp, Role::dso, Payload::bid, primary);
    auto corrected = dso_->correct(primary);
    inner_iterations_ += static_cast<std::uint64_t>(corrected.solution.iterations);
    if (corrected.solution.status != qp::Status::optimal) {
      failed_ = std::string("DSO projection ended with status ") + qp::to_string(corrected.solution.status);
      return std::numeric_limits<double>::infinity();
    }
    post_vector(Role::dso, Role::brp, Payload::corrected_bid, corrected.beta);

    // 3. price update
    lambda_ = brp_->clear(corrected.beta);
    const VectorXd x = market::allocate(corrected.beta, brp_->x_tot());
    max_balance_error_ = std::max(max_balance_error_, std::abs(x.sum() - brp_->x_tot()));
    for (auto& c : consumers_) {
      post(Role::brp, -1, Role::consumer, c.index(), Payload::corrected_bid, c.index(), corrected.beta(c.index()));
      post(Role::brp, -1, Role::consumer, c.index(), Payload::price, -1, lambda_);
      c.receive_corrected(corrected.beta(c.index()), lambda_);
    }
    // 4. dual update and aggregate broadcast
    for (auto& c : consumers_) {
      const double g = c.update_dual();
      post(Role::consumer, c.index(), Role::brp, -1, Payload::dual, c.index(), g);
      brp_->receive_dual(c.index(), g);
    }
    const double dual_sum = brp_->dual_sum();
    for (auto& c : consumers_) {
      post(Role::brp, -1, Role::consumer, c.index(), Payload::dual_sum, -1, dual_sum);
      c.receive_dual_sum(dual_sum);
    }
    last_dbeta2_ = (beta() - beta_old).squaredNorm();
    last_dgamma2_ = (gamma() - gamma_old).squaredNorm();
    return last_dbeta2_ + last_dgamma2_;
  }

  double last_dbeta2() const { return last_dbeta2_; }
  double last_dgamma2() const { return last_dgamma2_; }

  VectorXd beta() const {
    VectorXd b(n_);
    for (const auto& c : consumers_) b(c.index()) = c.beta();
    return b;
  }
  VectorXd gamma() const {
    VectorXd g(n_);
    for (const auto& c : consumers_) g(c.index()) = c.gamma();
    return g;
  }
  double lambda() const { return lambda_; }
  std::uint64_t round() const { return round_; }
  const std::string& failure() const { return failed_; }
  const game::GameConstants& constants() const { return constants_; }
  const game::StepSizes& steps() const { return steps_; }
  const std::vector<ConsumerProfile>& players() const { return players_; }
  const MessageBus& bus() const { return bus_; }
  double max_balance_error() const { return max_balance_error_; }
  std::uint64_t inner_iterations() const { return inner_iterations_; }
  double x_tot() const { return brp_->x_tot(); }

 private:
  void post(Role s, Index sid, Role r, Index rid, Payload k, Index subject, double v) {
    bus_.post(Message{round_, s, sid, r, rid, k, subject, {v}});
  }
  void post_vector(Role s, Role r, Payload k, const VectorXd& v) {
    bus_.post(Message{round_, s, -1, r, -1, k, -1, std::vector<double>(v.data(), v.data() + v.size())});
  }

  std::vector<ConsumerProfile> players_;
  Index n_ = 0;
  game::GameConstants constants_;
  game::StepSizes steps_;
  std::vector<ConsumerAgent> consumers_;
  std::unique_ptr<BrpAgent> brp_;
  std::unique_ptr<DsoAgent> dso_;
  MessageBus bus_;
  double lambda_ = 0.0;
  std::uint64_t round_ = 0;
  std::string failed_;
  double max_balance_error_ = 0.0;
  std::uint64_t inner_iterations_ = 0;
  double last_dbeta2_ = 0.0;
  double last_dgamma2_ = 0.0;
};

inline SolveReport run(const MarketScenario& scenario, const grid::DistributionNetwork& net,
                       const std::vector<ConsumerProfile>& consumers, const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Protocol proto(scenario, net, consumers, opt.projection, opt.message_log);
  SolveReport rep;
  rep.constants = proto.constants();
  rep.steps = proto.steps();
  rep.termination = Termination::max_iter;
  for (std::uint64_t k = 0; k < opt.max_iter; ++k) {
    const double r = proto.iterate();
    if (!proto.failure().empty()) {
      rep.termination = Termination::projection_failure;
      rep.failure = proto.failure();
      break;
    }
    rep.residuals.push_back(r);
    rep.final_residual = r;
    if (opt.trace)
      *opt.trace << "{\"k\":" << proto.round() << ",\"dbeta2\":" << proto.last_dbeta2()
                 << ",\"dgamma2\":" << proto.last_dgamma2() << ",\"lambda\":" << proto.lambda() << "}\n";
    if (r < opt.stop_tol) {
      rep.termination = Termination::converged;
      break;
    }
  }
  rep.iterations = proto.round();
  rep.beta_star = proto.beta();
  rep.gamma_star = proto.gamma();
  rep.lambda_star = proto.lambda();
  rep.x_star = market::allocate(rep.beta_star, scenario.x_tot);
  rep.max_balance_error = proto.max_balance_error();
  rep.messages = proto.bus().posted();
  rep.message_violations = proto.bus().violations();
  rep.inner_iterations = proto.inner_iterations();
  rep.negative_price = rep.lambda_star < 0.0;
  for (Index i = 0; i < rep.x_star.size(); ++i) {
    const auto& p = proto.players()[static_cast<std::size_t>(i)];
    if (rep.x_star(i) < -1e-6 || rep.x_star(i) > p.x_hat + 1e-6) rep.outside_cost_domain = true;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Solves the shadow and welfare problems on the same instance and records
/// the oracle gap and the efficiency figures.
inline void attach_oracles(SolveReport& rep, const MarketScenario& scenario, const grid::DistributionNetwork& net,
                           const std::vector<ConsumerProfile>& consumers, const qp::Settings& settings = {}) {
  const auto players = active_only(consumers);
  const auto shadow = qp::solve_shadow(consumers, net, scenario, settings);
  const auto welfare = qp::solve_welfare(consumers, net, scenario, settings);
  rep.x_shadow = shadow.x;
  rep.x_welfare = welfare.x;
  rep.welfare_price = welfare.price;
  rep.oracle_gap = (rep.x_star - shadow.x).norm() / shadow.x.norm();
  rep.poa = game::poa(players, shadow.x, welfare.x, rep.constants.alpha);
}

}  // namespace flexmarket::gne
