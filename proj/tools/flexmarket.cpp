// flexmarket: command-line front end for the flexibility market simulator.
//
//   flexmarket <solve|welfare|shadow|poa|sweep|security|validate> --scenario DIR
//              [--no-network] [--trace] [--seed U64] [--tol F] [--max-iters U]
//              [--jobs U] [--out DIR]
//
// Exit codes: 0 success, 2 schema, 3 reference, 4 game condition, 5 solver.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "flexmarket/campaigns.hpp"
#include "flexmarket/error.hpp"
#include "flexmarket/gne.hpp"
#include "flexmarket/programs.hpp"
#include "flexmarket/report.hpp"
#include "flexmarket/scenario_io.hpp"

namespace fs = std::filesystem;
using namespace flexmarket;

namespace {

struct Options {
  std::string command;
  fs::path scenario;
  fs::path out = "flexmarket-out";
  bool no_network = false;
  bool trace = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<std::uint64_t> max_iters;
  unsigned jobs = 1;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::reference: return 3;
    case ErrorKind::game_condition: return 4;
    case ErrorKind::solver:
    case ErrorKind::degenerate: return 5;
    case ErrorKind::schema:
    case ErrorKind::structure:
    case ErrorKind::contract:
    case ErrorKind::domain: return 2;
  }
  return 2;
}

io::LoadedScenario load(const fs::path& dir, const Options& o) {
  auto L = io::load_scenario(dir);
  auto& s = L.scenario;
  if (o.no_network) {
    s.network_enabled = false;
    double cap = 0.0;
    for (const auto& c : active_only(L.consumers)) cap += c.x_hat;
    require(cap >= s.x_tot, ErrorKind::game_condition,
            "sum of x_hat (" + std::to_string(cap) + ") is below x_tot (" + std::to_string(s.x_tot) + ")");
  }
  if (o.seed) s.seed = *o.seed;
  if (o.tol) {
    require(*o.tol > 0.0, ErrorKind::schema, "--tol must be positive");
    s.stop_tol = *o.tol;
  }
  if (o.max_iters) s.max_iter = *o.max_iters;
  // Outputs only appear once the inputs are known to be good.
  if (o.command != "validate") fs::create_directories(o.out);
  return L;
}

gne::RunOptions run_options(const MarketScenario& s) {
  gne::RunOptions r;
  r.stop_tol = s.stop_tol;
  r.max_iter = s.max_iter;
  return r;
}

void write_state(const Options& o, const io::LoadedScenario& L, const Eigen::VectorXd& x) {
  const auto check = campaign::check_network(L.network, L.consumers, x, L.scenario);
  report::write_network_state(o.out / "network_state.csv", L.network, check);
}

int cmd_solve(const Options& o) {
  const auto L = load(o.scenario, o);
  const auto players = active_only(L.consumers);
  auto ro = run_options(L.scenario);
  std::ofstream trace;
  if (o.trace) {
    trace.open(o.out / "trace.jsonl", std::ios::binary);
    require(trace.good(), ErrorKind::schema, "cannot write " + (o.out / "trace.jsonl").string());
    trace << std::setprecision(12);
    ro.trace = &trace;
  }
  auto rep = gne::run(L.scenario, L.network, L.consumers, ro);
  std::string oracle_error;
  if (rep.termination == gne::Termination::converged) {
    try {
      gne::attach_oracles(rep, L.scenario, L.network, L.consumers);
    } catch (const Error& e) {
      oracle_error = e.what();
    }
  }
  report::write_json(o.out / "report.json", report::solve_json(L.scenario, players, rep));
  report::write_allocation(o.out / "allocation.csv", players, rep.x_star, &rep.beta_star, &rep.gamma_star);
  write_state(o, L, rep.x_star);

  std::cout << "solve: " << gne::to_string(rep.termination) << " after " << rep.iterations << " iterations, lambda "
            << report::num(rep.lambda_star);
  if (rep.oracle_gap) std::cout << ", oracle gap " << report::num(*rep.oracle_gap);
  std::cout << " (" << std::fixed << std::setprecision(2) << rep.seconds << " s)\n";
  if (rep.termination == gne::Termination::projection_failure)
    throw Error(ErrorKind::solver, "DSO projection block failed: " + rep.failure);
  if (rep.termination == gne::Termination::max_iter)
    throw Error(ErrorKind::solver, "equilibrium iteration block: no convergence within " +
                                       std::to_string(L.scenario.max_iter) + " iterations");
  if (!oracle_error.empty()) throw Error(ErrorKind::solver, "oracle block: " + oracle_error);
  return 0;
}

int cmd_allocation(const Options& o, bool shadow) {
  const auto L = load(o.scenario, o);
  const auto players = active_only(L.consumers);
  std::optional<double> alpha;
  qp::AllocationResult a;
  if (shadow) {
    a = qp::solve_shadow(L.consumers, L.network, L.scenario);
    alpha = game::resolve_alpha(L.scenario, players);
  } else {
    a = qp::solve_welfare(L.consumers, L.network, L.scenario);
  }
  const char* name = shadow ? "shadow" : "welfare";
  report::write_json(o.out / "report.json", report::allocation_json(name, L.scenario, players, a, alpha));
  report::write_allocation(o.out / "allocation.csv", players, a.x);
  write_state(o, L, a.x);
  std::cout << name << ": " << qp::to_string(a.solution.status) << ", price " << report::num(a.price)
            << ", total cost " << report::num(game::total_cost(players, a.x)) << "\n";
  return 0;
}

int cmd_poa(const Options& o) {
  const auto L = load(o.scenario, o);
  const auto players = active_only(L.consumers);
  const auto welfare = qp::solve_welfare(L.consumers, L.network, L.scenario);
  const auto shadow = qp::solve_shadow(L.consumers, L.network, L.scenario);
  const double alpha = game::resolve_alpha(L.scenario, players);
  const auto p = game::poa(players, shadow.x, welfare.x, alpha);
  const auto n = static_cast<Eigen::Index>(players.size());
  report::write_poa(o.out / "poa.csv", o.scenario.filename().string(), n, alpha, p);
  report::ordered_json j;
  j["command"] = "poa";
  j["n_players"] = n;
  j["alpha"] = report::jnum(alpha);
  j["network_enabled"] = L.scenario.network_enabled;
  j["x_equilibrium"] = report::jvec(shadow.x);
  j["x_optimum"] = report::jvec(welfare.x);
  j["poa"] = report::poa_json(p);
  report::write_json(o.out / "report.json", j);
  std::cout << "poa: " << report::num(p.poa) << " < bound " << report::num(p.bound) << "\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto L = load(o.scenario, o);
  campaign::SweepOptions so;
  so.stop_tol = o.tol.value_or(campaign::kSweepStopTol);
  so.max_iter = L.scenario.max_iter;
  so.jobs = o.jobs;
  const auto cells = campaign::sweep(L.scenario, L.network, L.scenario.sweep, L.scenario.seed, so);
  report::write_sweep(o.out, cells);
  std::size_t flagged = 0;
  for (const auto& c : cells) flagged += c.ok ? 0 : 1;
  report::ordered_json j;
  j["command"] = "sweep";
  j["seed"] = L.scenario.seed;
  j["stop_tol"] = report::jnum(so.stop_tol);
  j["cells"] = cells.size();
  j["flagged"] = flagged;
  report::write_json(o.out / "report.json", j);
  std::cout << "sweep: " << cells.size() << " cells, " << flagged << " flagged\n";
  return 0;
}

int cmd_security(const Options& o) {
  std::vector<std::pair<std::string, fs::path>> variants;
  if (fs::exists(o.scenario / "scenario.json")) {
    variants.emplace_back(o.scenario.filename().string(), o.scenario);
  } else {
    for (const char* v : {"surplus", "deficit"}) {
      require(fs::exists(o.scenario / v / "scenario.json"), ErrorKind::schema,
              "security campaign needs " + (o.scenario / v).string() + "/scenario.json");
      variants.emplace_back(v, o.scenario / v);
    }
  }
  std::vector<campaign::SecurityComparison> cases;
  report::ordered_json j;
  j["command"] = "security";
  for (const auto& [name, dir] : variants) {
    Options single = o;
    single.no_network = false;
    const auto L = load(dir, single);
    cases.push_back(campaign::compare_security(name, L.scenario, L.network, L.consumers, run_options(L.scenario)));
    const auto& c = cases.back();
    for (const auto* r : {&c.unconstrained, &c.constrained}) {
      const char* tag = r == &c.unconstrained ? "unconstrained" : "constrained";
      report::ordered_json e;
      e["iterations"] = r->report.iterations;
      e["worst_voltage_violation"] = report::jnum(r->check.worst_voltage_violation);
      e["worst_overload"] = report::jnum(r->check.worst_overload);
      e["relative_balance_error"] = report::jnum(r->balance_error);
      e["lambda"] = report::jnum(r->report.lambda_star);
      e["x"] = report::jvec(r->report.x_star);
      j[name][tag] = e;
      std::cout << "security " << name << " " << tag << ": voltage violation "
                << report::num(r->check.worst_voltage_violation) << " pu, overload "
                << report::num(r->check.worst_overload) << " pu\n";
    }
  }
  report::write_security(o.out / "security_compare.csv", cases);
  report::write_json(o.out / "report.json", j);
  return 0;
}

int cmd_validate(const Options& o) {
  const auto L = load(o.scenario, o);
  const auto players = active_only(L.consumers);
  const double alpha = game::resolve_alpha(L.scenario, players);
  const auto c = game::constants(players, alpha, L.scenario.kappa);
  const auto steps = L.scenario.rho ? game::StepSizes{*L.scenario.rho, *L.scenario.nu} : game::max_step_sizes(c);
  std::cout << "valid: " << L.network.bus_count() - 1 << " load buses, " << L.network.line_count() << " lines, "
            << L.consumers.size() << " consumers (" << players.size() << " active), alpha " << report::num(alpha)
            << ", rho " << report::num(steps.rho) << ", nu " << report::num(steps.nu) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Game-theoretic real-time flexibility market on a distribution network"};
  app.require_subcommand(1, 1);
  Options o;
  std::optional<unsigned> jobs;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", o.scenario, "scenario directory")->required();
    sub->add_flag("--no-network", o.no_network, "drop the network rows from the DSO set");
    sub->add_flag("--trace", o.trace, "write per-round residuals to trace.jsonl");
    sub->add_option("--seed", o.seed, "seed for generated consumers");
    sub->add_option("--tol", o.tol, "stopping tolerance");
    sub->add_option("--max-iters", o.max_iters, "iteration limit");
    sub->add_option("--jobs", jobs, "parallel sweep cells");
    sub->add_option("--out", o.out, "output directory");
  };
  const std::vector<std::pair<const char*, const char*>> commands{
      {"solve", "run the semi-decentralised algorithm"},
      {"welfare", "solve the social-welfare problem"},
      {"shadow", "solve the shadow problem (equilibrium oracle)"},
      {"poa", "price of anarchy and its bound"},
      {"sweep", "efficiency and convergence sweep over N and delta"},
      {"security", "compare runs with and without network constraints"},
      {"validate", "load and check a scenario"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  o.command = app.get_subcommands().front()->get_name();
  o.jobs = jobs.value_or(1);
  if (o.jobs == 0) o.jobs = std::max(1u, std::thread::hardware_concurrency());

  try {
    if (o.command == "solve") return cmd_solve(o);
    if (o.command == "welfare") return cmd_allocation(o, false);
    if (o.command == "shadow") return cmd_allocation(o, true);
    if (o.command == "poa") return cmd_poa(o);
    if (o.command == "sweep") return cmd_sweep(o);
    if (o.command == "security") return cmd_security(o);
    return cmd_validate(o);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (schema): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error (solver): " << e.what() << "\n";
    return 5;
  }
}
