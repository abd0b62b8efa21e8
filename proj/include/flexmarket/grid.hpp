#pragma once

/**
 * Distribution network model: linear lossless power flow on a directed
 * graph, nodal balance through the incidence matrix, and the security
 * limits (line disks, voltage and angle boxes) that make up the DSO-held
 * part of the feasible bid set.
 *
 * Bus 1 is the slack bus: v_1 = 1, theta_1 = 0, and its injections p_1, q_1
 * are free variables.
 */

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::grid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bus {
  int id = 0;
  double vmin = 0.95;
  double vmax = 1.05;
  double theta_min = -0.5;
  double theta_max = 0.5;
  double reactive_injection = 0.0;  // q_b, per-unit
};

struct Line {
  int from = 0;
  int to = 0;
  double u = 0.0;  // conductance, per-unit
  double w = 0.0;  // susceptance, per-unit
  double z = 0.0;  // apparent-power capacity, per-unit
};

/// Signed L x B incidence matrix: +1 where a line leaves a bus, -1 where it
/// enters. Validates the graph while building it.
inline MatrixXd build_incidence(const std::vector<Bus>& buses, const std::vector<Line>& lines) {
  const auto B = static_cast<Index>(buses.size());
  require(B >= 2, ErrorKind::structure, "network needs at least two buses");
  require(!lines.empty(), ErrorKind::structure, "network has no lines");

  std::set<std::pair<int, int>> seen;
  MatrixXd E = MatrixXd::Zero(static_cast<Index>(lines.size()), B);
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto& ln = lines[l];
    const std::string tag = "line " + std::to_string(l + 1) + " (" + std::to_string(ln.from) +
                            "->" + std::to_string(ln.to) + ")";
    require(ln.from >= 1 && ln.from <= B && ln.to >= 1 && ln.to <= B, ErrorKind::structure,
            tag + " references an unknown bus");
    require(ln.from != ln.to, ErrorKind::structure, tag + " is a self-loop");
    require(seen.insert({ln.from, ln.to}).second, ErrorKind::structure, tag + " is a duplicate");
    E(static_cast<Index>(l), ln.from - 1) = 1.0;
    E(static_cast<Index>(l), ln.to - 1) = -1.0;
  }
  return E;
}

class DistributionNetwork {
 public:
  DistributionNetwork(std::vector<Bus> buses, std::vector<Line> lines)
      : buses_(std::move(buses)), lines_(std::move(lines)) {
    std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      const auto& b = buses_[i];
      require(b.id == static_cast<int>(i) + 1, ErrorKind::structure,
              "bus ids must be exactly 1..B without gaps");
      require(b.vmin < b.vmax, ErrorKind::structure,
              "bus " + std::to_string(b.id) + ": vmin must be below vmax");
      require(b.theta_min < b.theta_max, ErrorKind::structure,
              "bus " + std::to_string(b.id) + ": theta_min must be below theta_max");
    }
    for (const auto& ln : lines_) {
      require(ln.z > 0.0, ErrorKind::structure, "line capacity must be positive");
      require(ln.u != 0.0 || ln.w != 0.0, ErrorKind::structure,
              "line conductance and susceptance are both zero");
    }
    incidence_ = build_incidence(buses_, lines_);
    require(connected(), ErrorKind::structure, "network graph is not connected");
  }

  Index bus_count() const { return static_cast<Index>(buses_.size()); }
  Index line_count() const { return static_cast<Index>(lines_.size()); }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const Bus& bus(int id) const { return buses_.at(static_cast<std::size_t>(id - 1)); }
  const MatrixXd& incidence() const { return incidence_; }

  VectorXd conductances() const {
    VectorXd u(line_count());
    for (Index l = 0; l < line_count(); ++l) u(l) = lines_[static_cast<std::size_t>(l)].u;
    return u;
  }
  VectorXd susceptances() const {
    VectorXd w(line_count());
    for (Index l = 0; l < line_count(); ++l) w(l) = lines_[static_cast<std::size_t>(l)].w;
    return w;
  }

 private:
  bool connected() const {
    std::vector<std::vector<int>> adj(buses_.size());
    for (const auto& ln : lines_) {
      adj[static_cast<std::size_t>(ln.from - 1)].push_back(ln.to - 1);
      adj[static_cast<std::size_t>(ln.to - 1)].push_back(ln.from - 1);
    }
    std::vector<bool> seen(buses_.size(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
      const int b = stack.back();
      stack.pop_back();
      for (int s : adj[static_cast<std::size_t>(b)]) {
        if (!seen[static_cast<std::size_t>(s)]) {
          seen[static_cast<std::size_t>(s)] = true;
          ++count;
          stack.push_back(s);
        }
      }
    }
    return count == buses_.size();
  }

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  MatrixXd incidence_;
};

/// Consumers attached to each bus. Active consumers are referred to by their
/// position among the active consumers (the game's player index).
struct Attachments {
  std::map<int, std::vector<Index>> active;   // bus -> player indices
  std::map<int, std::vector<Index>> passive;  // bus -> positions in the full consumer list
};

inline Attachments attach(const DistributionNetwork& net, const std::vector<ConsumerProfile>& consumers) {
  Attachments out;
  Index player = 0;
  for (std::size_t i = 0; i < consumers.size(); ++i) {
    const auto& c = consumers[i];
    require(c.bus_id >= 1 && c.bus_id <= net.bus_count(), ErrorKind::reference,
            "consumer " + std::to_string(c.id) + " references unknown bus " + std::to_string(c.bus_id));
    require(c.bus_id != 1, ErrorKind::structure,
            "consumer " + std::to_string(c.id) + " is attached to the slack bus");
    if (c.active)
      out.active[c.bus_id].push_back(player++);
    else
      out.passive[c.bus_id].push_back(static_cast<Index>(i));
  }
  return out;
}

/// Linear lossless line flows for given angles and magnitudes.
inline std::pair<VectorXd, VectorXd> line_flows(const DistributionNetwork& net, const VectorXd& theta,
                                                const VectorXd& v) {
  require(theta.size() == net.bus_count() && v.size() == net.bus_count(), ErrorKind::contract,
          "line_flows: theta and v must have one entry per bus");
  const VectorXd dtheta = net.incidence() * theta;
  const VectorXd dv = net.incidence() * v;
  const VectorXd u = net.conductances();
  const VectorXd w = net.susceptances();
  VectorXd p = (-w.array() * dtheta.array() + u.array() * dv.array()).matrix();
  VectorXd q = (-u.array() * dtheta.array() - w.array() * dv.array()).matrix();
  return {std::move(p), std::move(q)};
}

/// Sign with which allocated flexibility enters a bus injection.
inline double injection_sign(Direction d) { return d == Direction::deficit ? 1.0 : -1.0; }

/// Active-power injections at buses 2..B in kWh units (entry b-2 is bus b):
/// p_b = -(sum of passive loads + sum over active consumers of (d_n -/+ x_n)).
inline VectorXd nodal_injections(const DistributionNetwork& net, const std::vector<ConsumerProfile>& consumers,
                                 const VectorXd& x, Direction direction) {
  const Attachments att = attach(net, consumers);
  Index n_active = 0;
  for (const auto& c : consumers) n_active += c.active ? 1 : 0;
  require(x.size() == n_active, ErrorKind::contract, "nodal_injections: one flexibility per active consumer");
  require((x.array() >= 0.0).all(), ErrorKind::domain, "nodal_injections: flexibility must be nonnegative");

  VectorXd p = VectorXd::Zero(net.bus_count() - 1);
  const double sign = injection_sign(direction);
  Index player = 0;
  for (const auto& c : consumers) {
    double& pb = p(c.bus_id - 2);
    if (c.active) {
      pb += -c.d + sign * x(player);
      ++player;
    } else {
      pb += -c.d;
    }
  }
  return p;
}

struct PowerFlowState {
  VectorXd theta;
  VectorXd v;
  VectorXd p_lines;
  VectorXd q_lines;
  double p_slack = 0.0;
  double q_slack = 0.0;
};

/// Solves the linear lossless power flow for given non-slack injections
/// (per-unit, buses 2..B). The reduced system is nonsingular for a connected
/// graph whose lines have (u, w) not both zero.
inline PowerFlowState solve_power_flow(const DistributionNetwork& net, const VectorXd& p_inj,
                                       const VectorXd& q_inj) {
  const Index B = net.bus_count();
  require(p_inj.size() == B - 1 && q_inj.size() == B - 1, ErrorKind::contract,
          "solve_power_flow: injections are given for buses 2..B");
  const MatrixXd& E = net.incidence();
  const MatrixXd Er = E.rightCols(B - 1);
  const VectorXd w = net.susceptances();
  const VectorXd u = net.conductances();
  const auto W = w.asDiagonal();
  const auto U = u.asDiagonal();

  // P_B = E^T(-W E theta + U E v), Q_B = E^T(-U E theta - W E v), slack fixed.
  MatrixXd K(2 * (B - 1), 2 * (B - 1));
  K.topLeftCorner(B - 1, B - 1) = -Er.transpose() * W * Er;
  K.topRightCorner(B - 1, B - 1) = Er.transpose() * U * Er;
  K.bottomLeftCorner(B - 1, B - 1) = -Er.transpose() * U * Er;
  K.bottomRightCorner(B - 1, B - 1) = -Er.transpose() * W * Er;

  // The slack column contributes through v_1 = 1 (theta_1 = 0 adds nothing).
  const VectorXd e1 = E.col(0);
  VectorXd rhs(2 * (B - 1));
  rhs.head(B - 1) = p_inj - Er.transpose() * (U * e1);
  rhs.tail(B - 1) = q_inj + Er.transpose() * (W * e1);

  Eigen::FullPivLU<MatrixXd> lu(K);
  require(lu.isInvertible(), ErrorKind::structure, "power-flow system is singular");
  const VectorXd sol = lu.solve(rhs);

  PowerFlowState st;
  st.theta = VectorXd::Zero(B);
  st.v = VectorXd::Ones(B);
  st.theta.tail(B - 1) = sol.head(B - 1);
  st.v.tail(B - 1) = sol.tail(B - 1);
  auto [p, q] = line_flows(net, st.theta, st.v);
  st.p_lines = std::move(p);
  st.q_lines = std::move(q);
  st.p_slack = E.col(0).dot(st.p_lines);
  st.q_slack = E.col(0).dot(st.q_lines);
  return st;
}

/// Reactive injections at buses 2..B from bus data.
inline VectorXd reactive_injections(const DistributionNetwork& net) {
  VectorXd q(net.bus_count() - 1);
  for (Index b = 1; b < net.bus_count(); ++b) q(b - 1) = net.buses()[static_cast<std::size_t>(b)].reactive_injection;
  return q;
}

/// Power-flow state produced by a flexibility allocation x (kWh).
inline PowerFlowState state_for_allocation(const DistributionNetwork& net,
                                           const std::vector<ConsumerProfile>& consumers, const VectorXd& x,
                                           const MarketScenario& scenario) {
  const VectorXd p = nodal_injections(net, consumers, x, scenario.direction) * scenario.kwh_to_pu();
  return solve_power_flow(net, p, reactive_injections(net));
}

/// y_i^2 + y_j^2 <= radius^2 on two variables of a program.
struct Disk {
  Index i = 0;
  Index j = 0;
  double radius = 0.0;
};

/**
 * Constraint system of the DSO-held set over the variable vector
 *
 *   [ x (N) | theta (B) | v (B) | P_L (L) | Q_L (L) | p_1 | q_1 ]
 *
 * where x is the allocated flexibility in kWh. The bid set follows by the
 * affine clearing map x = A beta + b; the auxiliary network variables only
 * need to exist. With the network disabled the layout is just [ x ] with
 * x >= 0.
 */
struct FeasibleSet {
  Index n_players = 0;
  bool network = false;
  Index theta = 0, v = 0, p_lines = 0, q_lines = 0, p_slack = 0, q_slack = 0;
  Index n_vars = 0;
  double kwh_to_pu = 1.0;  // coefficient of an allocation in the active balance rows

  SparseMatrix equality;  // line-flow rows, then active and reactive balance rows
  VectorXd equality_rhs;
  VectorXd lower;  // box block
  VectorXd upper;
  std::vector<Disk> disks;
};

inline FeasibleSet assemble_feasible_set(const DistributionNetwork& net, const std::vector<ConsumerProfile>& consumers,
                                         const MarketScenario& scenario) {
  const Attachments att = attach(net, consumers);
  FeasibleSet fs;
  for (const auto& c : consumers) fs.n_players += c.active ? 1 : 0;
  require(fs.n_players >= 1, ErrorKind::structure, "no active consumers");
  const Index N = fs.n_players;
  fs.network = scenario.network_enabled;

  if (!fs.network) {
    fs.n_vars = N;
    fs.equality.resize(0, N);
    fs.equality_rhs.resize(0);
    fs.lower = VectorXd::Zero(N);
    fs.upper = VectorXd::Constant(N, kInf);
    return fs;
  }

  const Index B = net.bus_count();
  const Index L = net.line_count();
  fs.theta = N;
  fs.v = fs.theta + B;
  fs.p_lines = fs.v + B;
  fs.q_lines = fs.p_lines + L;
  fs.p_slack = fs.q_lines + L;
  fs.q_slack = fs.p_slack + 1;
  fs.n_vars = fs.q_slack + 1;

  const MatrixXd& E = net.incidence();
  std::vector<Triplet> t;
  VectorXd rhs = VectorXd::Zero(2 * L + 2 * B);
  Index row = 0;

  // P_L + W E theta - U E v = 0 ;  Q_L + U E theta + W E v = 0
  for (Index l = 0; l < L; ++l, ++row) {
    const auto& ln = net.lines()[static_cast<std::size_t>(l)];
    t.emplace_back(row, fs.p_lines + l, 1.0);
    t.emplace_back(row, fs.theta + ln.from - 1, ln.w);
    t.emplace_back(row, fs.theta + ln.to - 1, -ln.w);
    t.emplace_back(row, fs.v + ln.from - 1, -ln.u);
    t.emplace_back(row, fs.v + ln.to - 1, ln.u);
  }
  for (Index l = 0; l < L; ++l, ++row) {
    const auto& ln = net.lines()[static_cast<std::size_t>(l)];
    t.emplace_back(row, fs.q_lines + l, 1.0);
    t.emplace_back(row, fs.theta + ln.from - 1, ln.u);
    t.emplace_back(row, fs.theta + ln.to - 1, -ln.u);
    t.emplace_back(row, fs.v + ln.from - 1, ln.w);
    t.emplace_back(row, fs.v + ln.to - 1, -ln.w);
  }

  // Active balance E^T P_L = P_B. Non-slack rows carry the allocation.
  const double k = scenario.kwh_to_pu();
  fs.kwh_to_pu = k;
  const double sign = injection_sign(scenario.direction);
  for (Index b = 0; b < B; ++b, ++row) {
    for (Index l = 0; l < L; ++l)
      if (E(l, b) != 0.0) t.emplace_back(row, fs.p_lines + l, E(l, b));
    if (b == 0) {
      t.emplace_back(row, fs.p_slack, -1.0);
      continue;
    }
    const int bus_id = static_cast<int>(b) + 1;
    double load = 0.0;
    if (auto it = att.active.find(bus_id); it != att.active.end())
      for (Index n : it->second) t.emplace_back(row, n, -sign * k);
    for (const auto& c : consumers)
      if (c.bus_id == bus_id) load += c.d;
    rhs(row) = -k * load;
  }
  // Reactive balance E^T Q_L = Q_B with fixed q_b away from the slack.
  for (Index b = 0; b < B; ++b, ++row) {
    for (Index l = 0; l < L; ++l)
      if (E(l, b) != 0.0) t.emplace_back(row, fs.q_lines + l, E(l, b));
    if (b == 0)
      t.emplace_back(row, fs.q_slack, -1.0);
    else
      rhs(row) = net.buses()[static_cast<std::size_t>(b)].reactive_injection;
  }

  fs.equality.resize(row, fs.n_vars);
  fs.equality.setFromTriplets(t.begin(), t.end());
  fs.equality_rhs = rhs;

  fs.lower = VectorXd::Constant(fs.n_vars, -kInf);
  fs.upper = VectorXd::Constant(fs.n_vars, kInf);
  fs.lower.head(N).setZero();
  for (Index b = 0; b < B; ++b) {
    const auto& bus = net.buses()[static_cast<std::size_t>(b)];
    fs.lower(fs.theta + b) = b == 0 ? 0.0 : bus.theta_min;
    fs.upper(fs.theta + b) = b == 0 ? 0.0 : bus.theta_max;
    fs.lower(fs.v + b) = b == 0 ? 1.0 : bus.vmin;
    fs.upper(fs.v + b) = b == 0 ? 1.0 : bus.vmax;
  }
  for (Index l = 0; l < L; ++l)
    fs.disks.push_back({fs.p_lines + l, fs.q_lines + l, net.lines()[static_cast<std::size_t>(l)].z});
  return fs;
}

}  // namespace flexmarket::grid
