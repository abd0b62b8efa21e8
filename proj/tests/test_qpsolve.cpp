#include <gtest/gtest.h>

#include <random>

#include "flexmarket/programs.hpp"
#include "flexmarket/qpsolve.hpp"
#include "support.hpp"

using namespace flexmarket;
using namespace flexmarket::qp;
using fmtest::player;

namespace {

ConvexProgram unconstrained(Index n) {
  ConvexProgram p;
  p.P.resize(n, n);
  p.P.setIdentity();
  p.q = VectorXd::Zero(n);
  p.A_eq.resize(0, n);
  p.b_eq.resize(0);
  p.lower = VectorXd::Constant(n, -kInf);
  p.upper = VectorXd::Constant(n, kInf);
  return p;
}

void expect_certified(const ConvexProgram& p, const Solution& s) {
  ASSERT_EQ(s.status, Status::optimal);
  const auto k = kkt_residuals(p, s);
  EXPECT_LE(k.stationarity, 1e-6);
  EXPECT_LE(k.complementarity, 1e-6);
  EXPECT_LE(k.primal, 1e-6);
}

MarketScenario scenario_for(double x_tot, double alpha = 1.0, bool network = true) {
  MarketScenario s;
  s.x_tot = x_tot;
  s.alpha = alpha;
  s.network_enabled = network;
  return s;
}

struct Congested : fmtest::Congested {
  MarketScenario s = scenario_for(100.0);
};

}  // namespace

TEST(Solve, UnconstrainedQuadratic) {
  auto p = unconstrained(3);
  p.q = -Eigen::Vector3d(1.5, -2.0, 0.25);
  const auto s = solve(p);
  expect_certified(p, s);
  EXPECT_LT((s.x - Eigen::Vector3d(1.5, -2.0, 0.25)).norm(), 1e-8);
}

TEST(Solve, ActiveBox) {
  auto p = unconstrained(1);
  p.q(0) = -2.0;
  p.upper(0) = 1.0;
  const auto s = solve(p);
  expect_certified(p, s);
  EXPECT_NEAR(s.x(0), 1.0, 1e-8);
  EXPECT_NEAR(s.y_box(0), 1.0, 1e-6);
}

TEST(Solve, DiskProjection) {
  auto p = unconstrained(2);
  p.q = -Eigen::Vector2d(3, 4);
  p.disks.push_back({0, 1, std::sqrt(25.0 * 0.64)});
  const auto s = solve(p);
  expect_certified(p, s);
  EXPECT_NEAR(s.x(0), 2.4, 1e-7);
  EXPECT_NEAR(s.x(1), 3.2, 1e-7);
}

TEST(Solve, DiskWithEqualityCoupling) {
  // min 0.5||y - c||^2, y0 + y1 = 1, y0^2 + y1^2 <= 0.5^2: unique point is
  // the disk boundary intersection closest to c; reference by 1-d search.
  auto p = unconstrained(2);
  p.q = -Eigen::Vector2d(2.0, -0.3);
  std::vector<Triplet> t{{0, 0, 1.0}, {0, 1, 1.0}};
  p.A_eq.resize(1, 2);
  p.A_eq.setFromTriplets(t.begin(), t.end());
  p.b_eq = Eigen::VectorXd::Constant(1, 0.6);
  p.disks.push_back({0, 1, 0.5});
  const auto s = solve(p);
  expect_certified(p, s);
  double best = INFINITY, best_t = 0;
  for (int i = 0; i <= 2000000; ++i) {
    const double y0 = -0.5 + i * 1e-6, y1 = 0.6 - y0;
    if (y0 * y0 + y1 * y1 > 0.25) continue;
    const double f = (y0 - 2.0) * (y0 - 2.0) + (y1 + 0.3) * (y1 + 0.3);
    if (f < best) best = f, best_t = y0;
  }
  EXPECT_NEAR(s.x(0), best_t, 2e-6);
}

TEST(Solve, InfeasibleBoxesAndBalance) {
  auto p = unconstrained(2);
  p.lower = Eigen::Vector2d(0, 0);
  p.upper = Eigen::Vector2d(1, 1);
  std::vector<Triplet> t{{0, 0, 1.0}, {0, 1, 1.0}};
  p.A_eq.resize(1, 2);
  p.A_eq.setFromTriplets(t.begin(), t.end());
  p.b_eq = Eigen::VectorXd::Constant(1, 3.0);
  EXPECT_EQ(solve(p).status, Status::infeasible);
}

TEST(Solve, MaxIterReported) {
  auto p = unconstrained(2);
  p.q = -Eigen::Vector2d(3, 4);
  p.disks.push_back({0, 1, 1.0});
  Settings st;
  st.max_iter = 3;
  const auto s = solve(p, st);
  EXPECT_EQ(s.status, Status::max_iter);
  EXPECT_EQ(s.iterations, 3);
}

TEST(ConvexProgram, ValidationErrors) {
  auto p = unconstrained(3);
  p.disks.push_back({0, 1, 1.0});
  p.disks.push_back({1, 2, 1.0});
  EXPECT_THROW(p.validate(), Error);
  p.disks = {{0, 1, -1.0}};
  EXPECT_THROW(p.validate(), Error);
  p.disks = {{0, 1, 1.0}};
  p.lower(0) = 0.0;
  EXPECT_THROW(p.validate(), Error);
  auto q = unconstrained(2);
  q.lower(1) = 2.0;
  q.upper(1) = 1.0;
  EXPECT_THROW(q.validate(), Error);
}

TEST(Projection, IdempotentOnCongestedFeeder) {
  Congested c;
  const auto fs = grid::assemble_feasible_set(c.net, c.consumers, c.s);
  PsiProjector proj(fs, c.s.x_tot);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd bt = fmtest::uniform_vector(3, -80, 80, rng);
    const auto r1 = proj.project(bt);
    expect_certified(proj.program(), r1.solution);
    const auto r2 = proj.project(r1.beta);
    expect_certified(proj.program(), r2.solution);
    EXPECT_LE((r2.beta - r1.beta).norm(), 1e-7);
  }
}

TEST(Projection, TwoBusMatchesActiveSetEnumeration) {
  const auto net = fmtest::two_bus(1e6);
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 1e3), player(2, 2, 0.004, 0.4, 1e3),
                                        player(3, 2, 0.004, 0.4, 1e3)};
  const auto s = scenario_for(30.0);
  const auto fs = grid::assemble_feasible_set(net, cs, s);
  auto [A, b] = market::allocation_matrix(3, s.x_tot);
  std::mt19937_64 rng(8);
  int active_cases = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const VectorXd bt = fmtest::uniform_vector(3, -60, 60, rng);
    const VectorXd beta = project_onto_psi(bt, fs, s.x_tot);

    // Brute force: every active subset of {x_i >= 0}, dense KKT solve.
    double best = INFINITY;
    VectorXd ref;
    for (int mask = 0; mask < 8; ++mask) {
      std::vector<int> act;
      for (int i = 0; i < 3; ++i)
        if (mask & (1 << i)) act.push_back(i);
      const int k = static_cast<int>(act.size());
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(3 + k, 3 + k);
      Eigen::VectorXd r = Eigen::VectorXd::Zero(3 + k);
      K.topLeftCorner(3, 3).setIdentity();
      r.head(3) = bt;
      for (int j = 0; j < k; ++j) {
        K.block(0, 3 + j, 3, 1) = -A.row(act[static_cast<std::size_t>(j)]).transpose();
        K.block(3 + j, 0, 1, 3) = A.row(act[static_cast<std::size_t>(j)]);
        r(3 + j) = -b(act[static_cast<std::size_t>(j)]);
      }
      const Eigen::VectorXd sol = K.completeOrthogonalDecomposition().solve(r);
      if ((K * sol - r).norm() > 1e-9) continue;
      const VectorXd z = sol.head(3);
      if (((A * z + b).array() < -1e-9).any() || (sol.tail(k).array() < -1e-9).any()) continue;
      const double d = (z - bt).norm();
      if (d < best) best = d, ref = z;
    }
    ASSERT_TRUE(std::isfinite(best));
    if (((A * bt + b).array() < 0).any()) ++active_cases;
    EXPECT_LT((beta - ref).norm(), 1e-6 * (1 + ref.norm()));
  }
  EXPECT_GT(active_cases, 5);
}

TEST(Projection, FirmlyNonexpansive) {
  Congested c;
  const auto fs = grid::assemble_feasible_set(c.net, c.consumers, c.s);
  PsiProjector proj(fs, c.s.x_tot);
  std::mt19937_64 rng(200);
  double worst = INFINITY;
  for (int pair = 0; pair < 200; ++pair) {
    const VectorXd u = fmtest::uniform_vector(3, -100, 100, rng);
    const VectorXd v = fmtest::uniform_vector(3, -100, 100, rng);
    const auto pu = proj.project(u);
    expect_certified(proj.program(), pu.solution);
    const auto pv = proj.project(v);
    expect_certified(proj.program(), pv.solution);
    const VectorXd d = pu.beta - pv.beta;
    worst = std::min(worst, (u - v).dot(d) - d.squaredNorm());
    EXPECT_LE(d.norm(), (u - v).norm() + 1e-8);
  }
  EXPECT_GE(worst, -1e-8);
}

TEST(Projection, NoNetworkReducesToNonnegativity) {
  const auto net = fmtest::two_bus();
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 1e3), player(2, 2, 0.004, 0.4, 1e3)};
  auto s = scenario_for(10.0, 1.0, false);
  const auto fs = grid::assemble_feasible_set(net, cs, s);
  // beta = (20, -20) gives x = (25, -15); the projection moves along (1,-1)
  // until x_2 = 0: beta = (12.5, -12.5) + ... with x = (10, 0).
  const VectorXd beta = project_onto_psi(Eigen::Vector2d(20, -20), fs, s.x_tot);
  const VectorXd x = market::allocate(beta, s.x_tot);
  EXPECT_NEAR(x(1), 0.0, 1e-7);
  EXPECT_NEAR(beta(0) - beta(1), 10.0, 1e-7);
  EXPECT_NEAR(beta(0) + beta(1), 0.0, 1e-7);
}

TEST(Welfare, HandKktInterior) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.35, 1e3), player(2, 2, 0.004, 0.45, 1e3)};
  for (bool network : {false, true}) {
    const auto r = solve_welfare(cs, fmtest::two_bus(1e3), scenario_for(100.0, 1.0, network));
    expect_certified(r.program, r.solution);
    EXPECT_NEAR(r.x(0), 62.5, 1e-8);
    EXPECT_NEAR(r.x(1), 37.5, 1e-8);
    EXPECT_NEAR(r.price, 0.004 * 62.5 + 0.35, 1e-7);
  }
}

TEST(Welfare, HandKktActiveCap) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.35, 50), player(2, 2, 0.004, 0.45, 1e3)};
  for (bool network : {false, true}) {
    const auto r = solve_welfare(cs, fmtest::two_bus(1e3), scenario_for(100.0, 1.0, network));
    expect_certified(r.program, r.solution);
    EXPECT_NEAR(r.x(0), 50.0, 1e-8);
    EXPECT_NEAR(r.x(1), 50.0, 1e-8);
  }
}

TEST(Welfare, SymmetricEqualSplit) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 1e3), player(2, 2, 0.004, 0.4, 1e3)};
  const auto r = solve_welfare(cs, fmtest::two_bus(), scenario_for(100.0));
  EXPECT_NEAR(r.x(0), 50.0, 1e-8);
  EXPECT_NEAR(r.x(1), 50.0, 1e-8);
}

TEST(Welfare, CapsBelowDemandNameTheBlock) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 10), player(2, 2, 0.004, 0.4, 10)};
  try {
    solve_welfare(cs, fmtest::two_bus(), scenario_for(100.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::solver);
    EXPECT_NE(std::string(e.what()).find("flexibility caps"), std::string::npos);
  }
}

TEST(Welfare, NetworkInfeasibilityNamesTheBlock) {
  // 100 kWh on a 1 MVA base is 0.1 pu; a 0.01 pu line cannot carry it.
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 1e3), player(2, 2, 0.004, 0.4, 1e3)};
  try {
    solve_welfare(cs, fmtest::two_bus(0.01), scenario_for(100.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::solver);
    EXPECT_NE(std::string(e.what()).find("network security"), std::string::npos);
  }
}

TEST(Shadow, HandKktOnInflatedCosts) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.35, 1e3), player(2, 2, 0.004, 0.45, 1e3)};
  const double alpha = 100.0;
  const auto r = solve_shadow(cs, fmtest::two_bus(), scenario_for(100.0, alpha));
  expect_certified(r.program, r.solution);
  const double slope = 0.004 + 1.0 / alpha;
  const double x1 = (100.0 + 0.1 / slope) / 2.0;
  EXPECT_NEAR(r.x(0), x1, 1e-8 * x1);
  EXPECT_NEAR(r.x(1), 100.0 - x1, 1e-8 * x1);
}

TEST(Shadow, SymmetricMatchesWelfare) {
  const std::vector<ConsumerProfile> cs{player(1, 2, 0.004, 0.4, 1e3), player(2, 3, 0.004, 0.4, 1e3)};
  const auto net = fmtest::feeder(3, 2.0, -4.0, 10.0);
  const auto w = solve_welfare(cs, net, scenario_for(80.0, 2.0));
  const auto s = solve_shadow(cs, net, scenario_for(80.0, 2.0));
  EXPECT_LT((w.x - s.x).norm(), 1e-7);
}

TEST(Shadow, ApproachesWelfareAsSlopeGrows) {
  std::mt19937_64 rng(4);
  const auto cs = fmtest::random_players(6, rng, 1e3, 2);
  const auto w = solve_welfare(cs, fmtest::two_bus(), scenario_for(300.0, 1.0, false));
  double prev_gap = INFINITY;
  for (double alpha : {1.0, 10.0, 100.0, 1000.0, 10000.0}) {
    const auto s = solve_shadow(cs, fmtest::two_bus(), scenario_for(300.0, alpha, false));
    const double gap = (s.x - w.x).norm() / w.x.norm();
    EXPECT_LT(gap, prev_gap);
    // Once alpha (N - 1) dominates 1/a the gap shrinks like 1/(alpha (N - 1)).
    if (alpha >= 1000.0) EXPECT_LT(gap, 0.2 * prev_gap);
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-2);
}

TEST(Shadow, InteriorSolutionMatchesAnalyticKkt) {
  std::mt19937_64 rng(21);
  const auto cs = fmtest::random_players(8, rng, 1e3, 2);
  const double alpha = 20.0, x_tot = 400.0;
  const auto r = solve_shadow(cs, fmtest::two_bus(), scenario_for(x_tot, alpha));
  // Equal inflated marginal costs: (a_n + e) x_n + b_n = mu, sum x_n = x_tot.
  const double e = 1.0 / (alpha * 7.0);
  double s1 = 0.0, s2 = 0.0;
  for (const auto& c : cs) s1 += 1.0 / (c.a + e), s2 += c.b_lin / (c.a + e);
  const double mu = (x_tot + s2) / s1;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const double xi = (mu - cs[i].b_lin) / (cs[i].a + e);
    EXPECT_NEAR(r.x(static_cast<Index>(i)), xi, 1e-6 * std::abs(xi));
  }
}
