#include "kmpc/dare.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kmpc/error.hpp"

namespace kmpc {
namespace {

void check_shapes(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                  const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const auto n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != m || R.cols() != m)
    throw config_error("DARE matrices have inconsistent dimensions");
  if (!A.allFinite() || !B.allFinite() || !Q.allFinite() || !R.allFinite())
    throw numerics_error("DARE matrices contain non-finite entries");
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (R + R.transpose()));
  if (llt.info() != Eigen::Success) throw config_error("DARE requires R positive definite");
}

Eigen::MatrixXd sym(const Eigen::MatrixXd& S) { return 0.5 * (S + S.transpose()); }

// Tolerances are relative to max(1, |S|_F).
double scale_of(const Eigen::MatrixXd& S) { return std::max(1.0, S.norm()); }

[[noreturn]] void diverged(const char* method, int iter, double residual) {
  std::ostringstream os;
  os << "DARE (" << method << ") did not converge after " << iter
     << " iterations; last residual " << residual
     << " (model may not be stabilisable)";
  throw numerics_error(os.str());
}

DareResult fixed_point(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                       const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                       const DareOptions& opt, Eigen::MatrixXd S) {
  double res = INFINITY;
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::MatrixXd T = sym(riccati_map(A, B, Q, R, S));
    Eigen::MatrixXd next = (1.0 - opt.damping) * T + opt.damping * S;
    if (!next.allFinite()) diverged("fixed point", it, res);
    S = next;
    res = dare_residual(A, B, Q, R, S);
    if (res <= opt.tol * scale_of(S)) return {S, res, it};
  }
  diverged("fixed point", opt.max_iter, res);
}

}  // namespace

Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                            const Eigen::MatrixXd& S) {
  Eigen::MatrixXd SA = S * A;
  Eigen::MatrixXd BtSA = B.transpose() * SA;
  Eigen::MatrixXd M = R + B.transpose() * S * B;
  return A.transpose() * SA - BtSA.transpose() * M.ldlt().solve(BtSA) + Q;
}

double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& S) {
  return (S - riccati_map(A, B, Q, R, S)).norm();
}

DareResult solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                      const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                      const DareOptions& opt) {
  check_shapes(A, B, Q, R);
  if (!(opt.damping >= 0 && opt.damping < 1))
    throw config_error("DARE damping must lie in [0, 1)");
  if (opt.method == DareMethod::FixedPoint) return fixed_point(A, B, Q, R, opt, Q);

  // Structure-preserving doubling (SDA).
  const auto n = A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd Ak = A;
  Eigen::MatrixXd Gk = B * R.ldlt().solve(B.transpose());
  Eigen::MatrixXd Hk = Q;
  int it = 0;
  double change = INFINITY;
  for (it = 1; it <= std::min(opt.max_iter, 200); ++it) {
    Eigen::PartialPivLU<Eigen::MatrixXd> W(I + Gk * Hk);
    Eigen::MatrixXd WA = W.solve(Ak);
    Eigen::MatrixXd WG = W.solve(Gk);
    Eigen::MatrixXd Hn = sym(Hk + Ak.transpose() * Hk * WA);
    Gk = sym(Gk + Ak * WG * Ak.transpose());
    Ak = Ak * WA;
    if (!Hn.allFinite() || !Gk.allFinite() || !Ak.allFinite())
      diverged("doubling", it, dare_residual(A, B, Q, R, Hk));
    change = (Hn - Hk).norm();
    Hk = Hn;
    if (change <= 1e-15 * std::max(1.0, Hk.norm())) break;
  }
  double res = dare_residual(A, B, Q, R, Hk);
  if (!std::isfinite(res) || change > 1e-8 * std::max(1.0, Hk.norm()))
    diverged("doubling", it, res);
  // A few plain Riccati sweeps remove the rounding left by the doubling.
  for (int k = 0; k < 20 && res > opt.tol * scale_of(Hk); ++k) {
    Hk = sym(riccati_map(A, B, Q, R, Hk));
    res = dare_residual(A, B, Q, R, Hk);
  }
  if (res > opt.tol * scale_of(Hk)) diverged("doubling", it, res);
  return {Hk, res, it};
}

Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& R, const Eigen::MatrixXd& S) {
  Eigen::MatrixXd M = R + B.transpose() * S * B;
  return M.ldlt().solve(B.transpose() * S * A);
}

}  // namespace kmpc
