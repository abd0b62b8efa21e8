#include <gtest/gtest.h>

#include <random>

#include "flexmarket/market.hpp"
#include "support.hpp"

using namespace flexmarket;
using namespace flexmarket::market;

TEST(ClearingPrice, Examples) {
  EXPECT_DOUBLE_EQ(clearing_price(Eigen::Vector2d(0, 0), 1.0, 100.0), 50.0);
  EXPECT_DOUBLE_EQ(clearing_price(Eigen::Vector2d(10, -10), 0.5, 100.0), 100.0);
  EXPECT_DOUBLE_EQ(clearing_price(Eigen::Vector2d(70, 30), 0.5, 100.0), 0.0);
}

TEST(ClearingPrice, NegativePricesAreAllowed) {
  EXPECT_LT(clearing_price(Eigen::Vector2d(80, 40), 1.0, 100.0), 0.0);
}

TEST(ClearingPrice, Errors) {
  try {
    clearing_price(Eigen::VectorXd::Ones(1), 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::game_condition);
  }
  try {
    clearing_price(Eigen::Vector2d(0, 0), 0.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
}

TEST(Allocate, Examples) {
  EXPECT_EQ(allocate(Eigen::Vector2d(0, 0), 100.0), Eigen::Vector2d(50, 50));
  EXPECT_EQ(allocate(Eigen::Vector2d(10, -10), 100.0), Eigen::Vector2d(60, 40));
  const Eigen::Vector3d beta(20, 50, 30);
  EXPECT_EQ(allocate(beta, 100.0), beta);
}

TEST(AllocationMatrix, TwoPlayers) {
  auto [A, b] = allocation_matrix(2, 100.0);
  Eigen::Matrix2d expected;
  expected << 0.5, -0.5, -0.5, 0.5;
  EXPECT_EQ(A, expected);
  EXPECT_EQ(b, Eigen::Vector2d(50, 50));
}

TEST(AllocationMatrix, ProjectorProperties) {
  for (Eigen::Index n : {2, 3, 5, 12, 40}) {
    auto [A, b] = allocation_matrix(n, 7.0);
    EXPECT_LT((A * Eigen::VectorXd::Ones(n)).norm(), 1e-14);
    EXPECT_LT((A * A - A).norm(), 1e-13);
    EXPECT_EQ(A, A.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const auto ev = es.eigenvalues();
    EXPECT_NEAR(ev(0), 0.0, 1e-12);
    for (Eigen::Index i = 1; i < n; ++i) EXPECT_NEAR(ev(i), 1.0, 1e-12);
  }
}

TEST(AllocationMatrix, IdempotentAgainstExplicitProduct) {
  // Oracle: elementwise triple loop instead of Eigen's product.
  auto [A, b] = allocation_matrix(5, 1.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += A(i, k) * A(k, j);
      EXPECT_NEAR(s, A(i, j), 1e-15);
    }
}

TEST(Allocate, BalanceAndPriceConsistencyOnRandomBids) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 2 + trial % 30;
    const Eigen::VectorXd beta = fmtest::uniform_vector(n, -100, 100, rng);
    const double x_tot = 10.0 + trial;
    const double alpha = 0.1 + 0.01 * trial;
    const Eigen::VectorXd x = allocate(beta, x_tot);
    EXPECT_NEAR(x.sum(), x_tot, 1e-10 * std::max(1.0, x_tot) * 10);
    const double lambda = clearing_price(beta, alpha, x_tot);
    EXPECT_LT((x - (alpha * lambda * Eigen::VectorXd::Ones(n) + beta)).norm(), 1e-10);
    auto [A, b] = allocation_matrix(n, x_tot);
    EXPECT_LT((x - (A * beta + b)).norm(), 1e-10);
  }
}

TEST(Clear, BidsWithCommonSlope) {
  const auto r = clear({{1, 10.0, 0.5}, {2, -10.0, 0.5}}, 100.0);
  EXPECT_DOUBLE_EQ(r.lambda, 100.0);
  EXPECT_EQ(r.x, Eigen::Vector2d(60, 40));
  EXPECT_THROW(clear({{1, 0.0, 0.5}, {2, 0.0, 0.6}}, 1.0), Error);
}
