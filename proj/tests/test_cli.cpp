#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "support.hpp"

namespace fs = std::filesystem;
using fmtest::scenario_dir;
using fmtest::TempScenario;

namespace {

class OutDir {
 public:
  explicit OutDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("flexmarket-cli-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
  }
  ~OutDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + FLEXMARKET_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quote(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json report(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "report.json")); }

}  // namespace

TEST(Cli, ValidateShippedScenarios) {
  for (const char* name : {"ieee33-analog", "ieee33-security/surplus", "ieee33-security/deficit", "two-bus"})
    EXPECT_EQ(run("validate --scenario " + quote(scenario_dir(name))), 0) << name;
}

TEST(Cli, SolveWritesReportsThatMatchTheOracle) {
  OutDir out("solve");
  ASSERT_EQ(run("solve --trace --scenario " + quote(scenario_dir("two-bus")) + " --out " + quote(out.path())), 0);
  for (const char* f : {"report.json", "allocation.csv", "network_state.csv", "trace.jsonl"})
    EXPECT_TRUE(fs::exists(out.path() / f)) << f;
  const auto j = report(out.path());
  EXPECT_EQ(j["termination"], "converged");
  EXPECT_LE(j["oracle_gap"].get<double>(), 1e-4);
  EXPECT_LE(j["balance_error"].get<double>(), 1e-9);
  EXPECT_LT(j["poa"]["poa"].get<double>(), j["poa"]["bound"].get<double>());
  EXPECT_FALSE(slurp(out.path() / "trace.jsonl").empty());
}

TEST(Cli, RunsAreByteIdentical) {
  OutDir a("det-a"), b("det-b");
  const std::string base = "solve --trace --scenario " + quote(scenario_dir("two-bus")) + " --out ";
  ASSERT_EQ(run(base + quote(a.path())), 0);
  ASSERT_EQ(run(base + quote(b.path())), 0);
  for (const char* f : {"report.json", "allocation.csv", "network_state.csv", "trace.jsonl"})
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
}

TEST(Cli, WelfareSplitsIdenticalConsumersEvenly) {
  OutDir out("welfare");
  ASSERT_EQ(run("welfare --scenario " + quote(scenario_dir("two-bus")) + " --out " + quote(out.path())), 0);
  const auto j = report(out.path());
  ASSERT_EQ(j["x"].size(), 2u);
  EXPECT_NEAR(j["x"][0].get<double>(), 30.0, 1e-8);
  EXPECT_NEAR(j["x"][1].get<double>(), 30.0, 1e-8);
  EXPECT_NEAR(j["price"].get<double>(), 0.4 + 0.004 * 30.0, 1e-8);
}

TEST(Cli, PoaTableStaysBelowTheBound) {
  OutDir out("poa");
  ASSERT_EQ(run("poa --scenario " + quote(scenario_dir("two-bus")) + " --out " + quote(out.path())), 0);
  std::istringstream csv(slurp(out.path() / "poa.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "scenario,n,alpha,cost_equilibrium,cost_optimum,poa,bound");
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 7u);
  const double poa = std::stod(cells[5]), bound = std::stod(cells[6]);
  EXPECT_GE(poa, 1.0);
  EXPECT_LT(poa, bound);
}

TEST(Cli, SweepAndSecurityWriteTheirTables) {
  OutDir sweep("sweep");
  TempScenario small("two-bus", "cli-sweep");
  ASSERT_TRUE(small.replace("scenario.json", "\"seed\": 1",
                            "\"seed\": 1, \"sweep\": {\"n_values\": [2, 4], \"delta_values\": [0.5]}"));
  ASSERT_EQ(run("sweep --jobs 2 --scenario " + quote(small.dir()) + " --out " + quote(sweep.path())), 0);
  for (const char* f : {"sweep_prices.csv", "sweep_poa.csv", "sweep_iters.csv"})
    EXPECT_TRUE(fs::exists(sweep.path() / f)) << f;

  OutDir sec("security");
  ASSERT_EQ(run("security --tol 1e-5 --scenario " + quote(scenario_dir("ieee33-security")) + " --out " +
                quote(sec.path())),
            0);
  const std::string csv = slurp(sec.path() / "security_compare.csv");
  EXPECT_NE(csv.find("surplus,bus,"), std::string::npos);
  EXPECT_NE(csv.find("deficit,line,32-33,"), std::string::npos);
}

TEST(Cli, ExitCodesFollowTheErrorKind) {
  TempScenario broken("two-bus", "cli-json");
  broken.write("scenario.json", "{ not json");
  EXPECT_EQ(run("validate --scenario " + quote(broken.dir())), 2);

  TempScenario unknown("two-bus", "cli-key");
  ASSERT_TRUE(unknown.replace("scenario.json", "\"seed\"", "\"sead\""));
  EXPECT_EQ(run("validate --scenario " + quote(unknown.dir())), 2);

  TempScenario bus("two-bus", "cli-bus");
  ASSERT_TRUE(bus.replace("consumers.csv", "2,2,1", "2,99,1"));
  EXPECT_EQ(run("validate --scenario " + quote(bus.dir())), 3);

  TempScenario delta("two-bus", "cli-delta");
  ASSERT_TRUE(delta.replace("scenario.json", "\"delta\": 0.5", "\"delta\": 1.0"));
  OutDir unused("cli-delta");
  EXPECT_EQ(run("solve --scenario " + quote(delta.dir()) + " --out " + quote(unused.path())), 4);
  EXPECT_FALSE(fs::exists(unused.path()));

  OutDir out("cli-iters");
  EXPECT_EQ(run("solve --max-iters 3 --scenario " + quote(scenario_dir("two-bus")) + " --out " + quote(out.path())),
            5);

  EXPECT_EQ(run("solve"), 2);
  EXPECT_EQ(run("frobnicate --scenario " + quote(scenario_dir("two-bus"))), 2);
  EXPECT_EQ(run("validate --scenario /nonexistent/flexmarket"), 2);
}

TEST(Cli, InfeasibleNetworkIsSolverFailure) {
  // No allocation keeps the flow within a 0.01 pu rating.
  TempScenario t("two-bus", "cli-infeasible");
  ASSERT_TRUE(t.replace("lines.csv", "20.0,-40.0,1.0", "20.0,-40.0,0.01"));
  OutDir out("cli-infeasible");
  EXPECT_EQ(run("welfare --scenario " + quote(t.dir()) + " --out " + quote(out.path())), 5);
}
