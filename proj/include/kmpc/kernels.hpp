#pragma once

#include <Eigen/Dense>

namespace kmpc {

// Second-moment matrices of a snapshot pair:
//   F = (1/M) D1 D0^T,  G = (1/M) D0 D0^T.
struct GramPair {
  Eigen::MatrixXd F;
  Eigen::MatrixXd G;
};

// Reference implementation: one rank-1 update per column, in order.
GramPair gram_serial(const Eigen::MatrixXd& D0, const Eigen::MatrixXd& D1);

// OpenMP version. Columns are split into a fixed number of chunks that does
// not depend on the thread count, and partial sums are combined in chunk
// order, so the result is bitwise reproducible for any number of threads.
GramPair gram_parallel(const Eigen::MatrixXd& D0, const Eigen::MatrixXd& D1);

// Relative Frobenius residual ||Y - A X||_F / ||Y||_F, columns in parallel.
double relative_residual(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& A,
                         const Eigen::MatrixXd& X);

}  // namespace kmpc
