#pragma once

#include <Eigen/Dense>

namespace kmpc {

enum class DareMethod { Doubling, FixedPoint };

struct DareOptions {
  double tol = 1e-10;  // on |S - T(S)|_F / max(1, |S|_F)
  int max_iter = 100000;
  DareMethod method = DareMethod::Doubling;
  // Fixed-point damping: S <- (1 - damping) * T(S) + damping * S.
  double damping = 0.0;
};

struct DareResult {
  Eigen::MatrixXd S;
  double residual = 0.0;
  int iterations = 0;
};

// Riccati map T(S) = A'SA - A'SB (R + B'SB)^-1 B'SA + Q.
Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                            const Eigen::MatrixXd& S);

// Frobenius norm of S - T(S).
double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& S);

// Stabilising solution of the discrete algebraic Riccati equation.
// Throws a numerics error carrying the last residual on divergence.
DareResult solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                      const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                      const DareOptions& opt = {});

// State feedback u = -K x of the associated infinite-horizon LQR.
Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& R, const Eigen::MatrixXd& S);

}  // namespace kmpc
