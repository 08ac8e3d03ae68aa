#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "lnvb/error.hpp"
#include "lnvb/sparse_cholesky.hpp"

namespace {

using Eigen::MatrixXd;
using lnvb::SparseCholesky;
using Sparse = Eigen::SparseMatrix<double>;

Sparse random_spd(int n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  MatrixXd b = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    b(i, i) = 1.0 + u(rng);
    for (int j = 0; j < i; ++j) {
      if (u(rng) < density) {
        b(i, j) = z(rng);
      }
    }
  }
  const MatrixXd q = b * b.transpose();
  return q.sparseView(1e-300, 1.0);
}

TEST(SparseCholesky, LogDetAndSolveMatchDense) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Sparse q = random_spd(40, 0.08, rng);
    SparseCholesky chol;
    chol.analyze(q);
    ASSERT_TRUE(chol.factorize(q));
    const MatrixXd dq(q);
    Eigen::LLT<MatrixXd> llt(dq);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    EXPECT_NEAR(chol.log_det(), logdet, 1e-10 * std::abs(logdet) + 1e-12);
    const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(40, -1.0, 2.0);
    EXPECT_LT((chol.solve(b) - llt.solve(b)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SparseCholesky, SelectedInverseMatchesDenseInverse) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Sparse q = random_spd(60, 0.05, rng);
    SparseCholesky chol;
    ASSERT_TRUE(chol.factorize(q));
    const auto sel = chol.selected_inverse();
    const MatrixXd inv = MatrixXd(q).inverse();
    for (int k = 0; k < q.outerSize(); ++k) {
      for (Sparse::InnerIterator it(q, k); it; ++it) {
        ASSERT_TRUE(sel.contains(it.row(), it.col()));
        EXPECT_NEAR(sel(it.row(), it.col()), inv(it.row(), it.col()), 1e-10 * std::abs(inv(it.row(), it.row())))
            << it.row() << "," << it.col();
      }
    }
    EXPECT_LT((sel.diagonal() - inv.diagonal()).cwiseAbs().maxCoeff(), 1e-10 * inv.diagonal().maxCoeff());
  }
}

TEST(SparseCholesky, TridiagonalSelectedInverse) {
  // AR1 precision: inverse is rho^|i-j| / (1 - rho^2).
  const int n = 30;
  const double rho = 0.7;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i, (i == 0 || i == n - 1) ? 1.0 : 1.0 + rho * rho);
    if (i > 0) {
      t.emplace_back(i, i - 1, -rho);
      t.emplace_back(i - 1, i, -rho);
    }
  }
  Sparse q(n, n);
  q.setFromTriplets(t.begin(), t.end());
  SparseCholesky chol;
  ASSERT_TRUE(chol.factorize(q));
  const auto sel = chol.selected_inverse();
  for (int i = 0; i < n; ++i) {
    EXPECT_NEAR(sel(i, i), 1.0 / (1.0 - rho * rho), 1e-12);
    if (i > 0) {
      EXPECT_NEAR(sel(i, i - 1), rho / (1.0 - rho * rho), 1e-12);
    }
  }
  EXPECT_THROW(sel(0, n - 1), lnvb::DomainError);
}

TEST(SparseCholesky, SampleCovariance) {
  std::mt19937_64 gen(3);
  const Sparse q = random_spd(8, 0.3, gen);
  SparseCholesky chol;
  ASSERT_TRUE(chol.factorize(q));
  const MatrixXd sigma = MatrixXd(q).inverse();
  lnvb::Rng rng(4);
  MatrixXd acc = MatrixXd::Zero(8, 8);
  const int draws = 200000;
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd x = chol.sample_zero_mean(rng);
    acc += x * x.transpose();
  }
  acc /= draws;
  for (int i = 0; i < 8; ++i) {
    EXPECT_NEAR(acc(i, i) / sigma(i, i), 1.0, 0.02);
  }
  // Deterministic given the seed.
  lnvb::Rng a(7), b(7);
  EXPECT_EQ(chol.sample_zero_mean(a), chol.sample_zero_mean(b));
}

TEST(SparseCholesky, DetectsIndefinite) {
  Sparse q(2, 2);
  q.insert(0, 0) = 1.0;
  q.insert(1, 0) = 2.0;
  q.insert(0, 1) = 2.0;
  q.insert(1, 1) = 1.0;
  SparseCholesky chol;
  EXPECT_FALSE(chol.factorize(q));
  EXPECT_THROW(chol.log_det(), lnvb::NumericalFailure);
}

TEST(SparseCholesky, ReusesAnalysisAcrossValues) {
  std::mt19937_64 rng(5);
  Sparse q = random_spd(20, 0.1, rng);
  SparseCholesky chol;
  chol.analyze(q);
  ASSERT_TRUE(chol.factorize(q));
  const double first = chol.log_det();
  q *= 2.0;
  ASSERT_TRUE(chol.factorize(q));
  EXPECT_NEAR(chol.log_det() - first, 20.0 * std::log(2.0), 1e-10);
  SparseCholesky copy(chol);
  EXPECT_TRUE(copy.analyzed());
  ASSERT_TRUE(copy.factorize(q));
  EXPECT_NEAR(copy.log_det(), chol.log_det(), 1e-12);
}

}  // namespace
