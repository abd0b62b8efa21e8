#pragma once

// Report emission: report.json and the CSV tables. Numbers carry 12
// significant digits and nothing time-dependent is written, so identical
// inputs give byte-identical files.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "flexmarket/campaigns.hpp"
#include "flexmarket/error.hpp"
#include "flexmarket/gne.hpp"
#include "flexmarket/grid.hpp"
#include "flexmarket/programs.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::report {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);  // no "-0"
  return buf;
}

/// JSON number rounded to 12 significant digits; null when not finite.
inline ordered_json jnum(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(num(v));
}

inline ordered_json jvec(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(jnum(v(i)));
  return a;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    require(out_.good(), ErrorKind::schema, "cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << csv_field(cells[i]);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::schema, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// allocation.csv: consumer, bus, x, beta, gamma. Bids and duals are left
/// empty for the centralised programs, which have none.
inline void write_allocation(const fs::path& path, const std::vector<ConsumerProfile>& players,
                             const Eigen::VectorXd& x, const Eigen::VectorXd* beta = nullptr,
                             const Eigen::VectorXd* gamma = nullptr) {
  CsvWriter w(path, {"consumer", "bus", "x", "beta", "gamma"});
  for (std::size_t i = 0; i < players.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    w.row({std::to_string(players[i].id), std::to_string(players[i].bus_id), num(x(k)), beta ? num((*beta)(k)) : "",
           gamma ? num((*gamma)(k)) : ""});
  }
}

/// network_state.csv: one row per bus (voltage, angle against bounds) and
/// per line (flows and apparent loading against the rating).
inline void write_network_state(const fs::path& path, const grid::DistributionNetwork& net,
                                const campaign::NetworkCheck& c, double tol = 1e-6) {
  CsvWriter w(path, {"element", "id", "voltage", "angle", "vmin", "vmax", "p", "q", "loading", "capacity", "violation"});
  for (std::size_t b = 0; b < net.buses().size(); ++b) {
    const auto& bus = net.buses()[b];
    const auto k = static_cast<Eigen::Index>(b);
    const double v = c.state.v(k);
    const bool bad = b > 0 && (v < bus.vmin - tol || v > bus.vmax + tol);
    w.row({"bus", std::to_string(bus.id), num(v), num(c.state.theta(k)), num(b ? bus.vmin : 1.0),
           num(b ? bus.vmax : 1.0), "", "", "", "", bad ? "1" : "0"});
  }
  for (std::size_t l = 0; l < net.lines().size(); ++l) {
    const auto& ln = net.lines()[l];
    const auto k = static_cast<Eigen::Index>(l);
    const bool bad = c.loading(k) > ln.z + tol;
    w.row({"line", std::to_string(ln.from) + "-" + std::to_string(ln.to), "", "", "", "", num(c.state.p_lines(k)),
           num(c.state.q_lines(k)), num(c.loading(k)), num(ln.z), bad ? "1" : "0"});
  }
}

inline ordered_json scenario_json(const MarketScenario& s, const game::GameConstants& c) {
  ordered_json j;
  j["x_tot"] = jnum(s.x_tot);
  j["direction"] = to_string(s.direction);
  j["network_enabled"] = s.network_enabled;
  j["n_players"] = c.n;
  j["alpha"] = jnum(c.alpha);
  j["delta"] = s.delta ? jnum(*s.delta) : ordered_json(nullptr);
  j["kappa"] = jnum(c.kappa);
  j["eta_f"] = jnum(c.eta_f);
  j["kappa_f"] = jnum(c.kappa_f);
  return j;
}

inline ordered_json poa_json(const game::PoaResult& p) {
  ordered_json j;
  j["cost_equilibrium"] = jnum(p.cost_equilibrium);
  j["cost_optimum"] = jnum(p.cost_optimum);
  j["poa"] = jnum(p.poa);
  j["bound"] = jnum(p.bound);
  j["within_bound"] = p.within_bound;
  return j;
}

/// report.json for `solve`.
inline ordered_json solve_json(const MarketScenario& s, const std::vector<ConsumerProfile>& players,
                               const gne::SolveReport& r) {
  ordered_json j;
  j["command"] = "solve";
  j["scenario"] = scenario_json(s, r.constants);
  j["step_sizes"] = {{"rho", jnum(r.steps.rho)}, {"nu", jnum(r.steps.nu)}};
  j["stop_tol"] = jnum(s.stop_tol);
  j["termination"] = gne::to_string(r.termination);
  if (!r.failure.empty()) j["failure"] = r.failure;
  j["iterations"] = r.iterations;
  j["final_residual"] = jnum(r.final_residual);
  j["lambda"] = jnum(r.lambda_star);
  j["negative_price"] = r.negative_price;
  j["outside_cost_domain"] = r.outside_cost_domain;
  j["balance_error"] = jnum(std::abs(r.x_star.sum() - s.x_tot));
  j["max_balance_error"] = jnum(r.max_balance_error);
  j["messages"] = r.messages;
  j["message_violations"] = r.message_violations;
  j["projection_iterations"] = r.inner_iterations;
  j["x"] = jvec(r.x_star);
  j["beta"] = jvec(r.beta_star);
  j["gamma"] = jvec(r.gamma_star);
  ordered_json ids = ordered_json::array();
  for (const auto& p : players) ids.push_back(p.id);
  j["consumer_ids"] = ids;
  if (r.oracle_gap) {
    j["oracle_gap"] = jnum(*r.oracle_gap);
    j["x_shadow"] = jvec(*r.x_shadow);
    j["x_welfare"] = jvec(*r.x_welfare);
    j["welfare_price"] = jnum(*r.welfare_price);
  }
  if (r.poa) j["poa"] = poa_json(*r.poa);
  return j;
}

/// report.json for the centralised programs.
inline ordered_json allocation_json(const char* command, const MarketScenario& s,
                                    const std::vector<ConsumerProfile>& players, const qp::AllocationResult& a,
                                    std::optional<double> alpha) {
  ordered_json j;
  j["command"] = command;
  j["x_tot"] = jnum(s.x_tot);
  j["direction"] = to_string(s.direction);
  j["network_enabled"] = s.network_enabled;
  j["n_players"] = players.size();
  if (alpha) j["alpha"] = jnum(*alpha);
  j["status"] = qp::to_string(a.solution.status);
  j["solver_iterations"] = a.solution.iterations;
  j["price"] = jnum(a.price);
  j["total_cost"] = jnum(game::total_cost(players, a.x));
  j["x"] = jvec(a.x);
  ordered_json ids = ordered_json::array();
  for (const auto& p : players) ids.push_back(p.id);
  j["consumer_ids"] = ids;
  return j;
}

inline void write_poa(const fs::path& path, const std::string& name, Eigen::Index n, double alpha,
                      const game::PoaResult& p) {
  CsvWriter w(path, {"scenario", "n", "alpha", "cost_equilibrium", "cost_optimum", "poa", "bound"});
  w.row({name, std::to_string(n), num(alpha), num(p.cost_equilibrium), num(p.cost_optimum), num(p.poa), num(p.bound)});
}

inline std::string flag(const campaign::SweepCell& c) { return c.ok ? "ok" : c.error; }

inline void write_sweep(const fs::path& dir, const std::vector<campaign::SweepCell>& cells) {
  CsvWriter prices(dir / "sweep_prices.csv", {"n", "delta", "alpha", "price", "welfare_price", "flag"});
  CsvWriter poa(dir / "sweep_poa.csv",
                {"n", "delta", "alpha", "cost_equilibrium", "cost_optimum", "poa", "bound", "flag"});
  CsvWriter iters(dir / "sweep_iters.csv", {"n", "delta", "iterations", "termination", "oracle_gap", "flag"});
  for (const auto& c : cells) {
    const std::string n = std::to_string(c.n), d = num(c.delta);
    prices.row({n, d, num(c.alpha), num(c.price), num(c.welfare_price), flag(c)});
    poa.row({n, d, num(c.alpha), num(c.cost_equilibrium), num(c.cost_optimum), num(c.poa), num(c.bound), flag(c)});
    iters.row({n, d, std::to_string(c.iterations), c.termination, num(c.oracle_gap), flag(c)});
  }
}

/// security_compare.csv: every bus voltage and line loading for the run
/// without and with network rows, and whether each breaks its limit.
inline void write_security(const fs::path& path, const std::vector<campaign::SecurityComparison>& cases,
                           double tol = 1e-6) {
  CsvWriter w(path, {"variant", "element", "id", "lower", "upper", "unconstrained", "constrained",
                     "unconstrained_violation", "constrained_violation"});
  for (const auto& c : cases) {
    const auto& nu = c.unconstrained.check;
    const auto& nc = c.constrained.check;
    const auto& buses = c.buses;
    for (std::size_t b = 1; b < buses.size(); ++b) {
      const auto k = static_cast<Eigen::Index>(b);
      auto bad = [&](double v) { return v < buses[b].vmin - tol || v > buses[b].vmax + tol ? "1" : "0"; };
      w.row({c.variant, "bus", std::to_string(buses[b].id), num(buses[b].vmin), num(buses[b].vmax),
             num(nu.state.v(k)), num(nc.state.v(k)), bad(nu.state.v(k)), bad(nc.state.v(k))});
    }
    const auto& lines = c.lines;
    for (std::size_t l = 0; l < lines.size(); ++l) {
      const auto k = static_cast<Eigen::Index>(l);
      auto bad = [&](double s) { return s > lines[l].z + tol ? "1" : "0"; };
      w.row({c.variant, "line", std::to_string(lines[l].from) + "-" + std::to_string(lines[l].to), "",
             num(lines[l].z), num(nu.loading(k)), num(nc.loading(k)), bad(nu.loading(k)), bad(nc.loading(k))});
    }
  }
}

}  // namespace flexmarket::report
