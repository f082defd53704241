#include "kmpc/kernels.hpp"

#include <gtest/gtest.h>
#include <omp.h>

namespace kmpc {
namespace {

Eigen::MatrixXd random_matrix(int r, int c, unsigned seed) {
  std::srand(seed);
  return Eigen::MatrixXd::Random(r, c);
}

TEST(Gram, SerialMatchesDirectProduct) {
  Eigen::MatrixXd D0 = random_matrix(7, 501, 1), D1 = random_matrix(7, 501, 2);
  GramPair g = gram_serial(D0, D1);
  EXPECT_LE((g.G - D0 * D0.transpose() / 501.0).norm(), 1e-12 * g.G.norm());
  EXPECT_LE((g.F - D1 * D0.transpose() / 501.0).norm(), 1e-12 * g.F.norm());
}

TEST(Gram, ParallelMatchesSerial) {
  Eigen::MatrixXd D0 = random_matrix(13, 4099, 3), D1 = random_matrix(13, 4099, 4);
  GramPair s = gram_serial(D0, D1);
  GramPair p = gram_parallel(D0, D1);
  EXPECT_LE((s.G - p.G).norm(), 1e-13 * s.G.norm());
  EXPECT_LE((s.F - p.F).norm(), 1e-13 * s.F.norm());
}

TEST(Gram, ParallelIsBitwiseIndependentOfThreadCount) {
  Eigen::MatrixXd D0 = random_matrix(5, 3001, 5), D1 = random_matrix(5, 3001, 6);
  int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  GramPair a = gram_parallel(D0, D1);
  omp_set_num_threads(4);
  GramPair b = gram_parallel(D0, D1);
  omp_set_num_threads(saved);
  EXPECT_TRUE((a.G.array() == b.G.array()).all());
  EXPECT_TRUE((a.F.array() == b.F.array()).all());
}

TEST(Gram, GIsSymmetricPositiveSemidefinite) {
  Eigen::MatrixXd D0 = random_matrix(6, 200, 7);
  GramPair g = gram_parallel(D0, D0);
  EXPECT_EQ(g.G, g.G.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.G);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
}

TEST(Residual, MatchesDirectFormula) {
  Eigen::MatrixXd A = random_matrix(4, 4, 8), X = random_matrix(4, 300, 9);
  Eigen::MatrixXd Y = A * X + 0.01 * random_matrix(4, 300, 10);
  double expect = (Y - A * X).norm() / Y.norm();
  EXPECT_NEAR(relative_residual(Y, A, X), expect, 1e-14);
  EXPECT_NEAR(relative_residual(A * X, A, X), 0.0, 1e-15);
}

}  // namespace
}  // namespace kmpc
