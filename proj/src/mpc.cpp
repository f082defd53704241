#include "kmpc/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "kmpc/error.hpp"

namespace kmpc {

namespace {

ConstraintMode parse_mode(const std::string& s, const std::string& key) {
  if (s == "off") return ConstraintMode::Off;
  if (s == "soft") return ConstraintMode::Soft;
  if (s == "hard") return ConstraintMode::Hard;
  throw config_error(key + ": expected off, soft or hard, got '" + s + "'");
}

std::string mode_name(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::Off: return "off";
    case ConstraintMode::Soft: return "soft";
    case ConstraintMode::Hard: return "hard";
  }
  return "off";
}

int idx(int sigma) { return sigma == 0 ? 0 : 1; }

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void MpcConfig::validate() const {
  if (horizon < 1) throw config_error("mpc horizon must be >= 1");
  if (!(sample_period > 0)) throw config_error("mpc sample period must be > 0");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Q);
  if (!Q.allFinite() || es.eigenvalues().minCoeff() < 0)
    throw config_error("mpc Q must be symmetric positive semidefinite");
  for (int s = 0; s < 2; ++s) {
    if (!(R[s] > 0)) throw config_error("mpc R must be > 0");
    if (!(u_min[s] <= u_max[s])) throw config_error("mpc input bounds are inverted");
  }
  if (!(theta_min < theta_max)) throw config_error("mpc angle bounds are inverted");
  if (!(velocity_max > 0)) throw config_error("mpc velocity bound must be > 0");
  if (state_weight < 0 || terminal_weight < 0)
    throw config_error("mpc penalty weights must be >= 0");
  if (max_iter < 1 || !(tol > 0)) throw config_error("mpc solver settings are invalid");
  if (al_outer < 1 || !(al_growth >= 1)) throw config_error("mpc augmented-Lagrangian settings are invalid");
}

MpcConfig MpcConfig::from_config(const ConfigFile& cf) {
  MpcConfig c;
  c.dictionary = cf.get_string("mpc.dictionary", c.dictionary);
  c.horizon = cf.get_int("mpc.horizon_steps", c.horizon);
  c.sample_period = cf.get_double("mpc.sample_period_s", c.sample_period);
  c.Q(0, 0) = cf.get_double("mpc.q_angle_per_deg2", c.Q(0, 0));
  c.Q(1, 1) = cf.get_double("mpc.q_velocity_per_deg2_s2", c.Q(1, 1));
  c.R[0] = cf.get_double("mpc.r_stance_per_ma2", c.R[0]);
  c.R[1] = cf.get_double("mpc.r_swing_per_ma2", c.R[1]);
  c.u_min[0] = cf.get_double("mpc.u_min_stance_ma", c.u_min[0]);
  c.u_max[0] = cf.get_double("mpc.u_max_stance_ma", c.u_max[0]);
  c.u_min[1] = cf.get_double("mpc.u_min_swing_ma", c.u_min[1]);
  c.u_max[1] = cf.get_double("mpc.u_max_swing_ma", c.u_max[1]);
  c.theta_min = cf.get_double("mpc.theta_min_deg", c.theta_min);
  c.theta_max = cf.get_double("mpc.theta_max_deg", c.theta_max);
  if (cf.has("mpc.velocity_max_rad_s"))
    c.velocity_max = cf.require_double("mpc.velocity_max_rad_s") * kDegPerRad;
  c.state_mode = parse_mode(cf.get_string("mpc.state_constraints", mode_name(c.state_mode)),
                            "mpc.state_constraints");
  c.state_weight = cf.get_double("mpc.state_penalty_weight", c.state_weight);
  c.terminal_cost = cf.get_bool("mpc.terminal_cost", c.terminal_cost);
  c.terminal_mode = parse_mode(cf.get_string("mpc.terminal_constraint", mode_name(c.terminal_mode)),
                               "mpc.terminal_constraint");
  c.terminal_weight = cf.get_double("mpc.terminal_penalty_weight", c.terminal_weight);
  c.epsilon = cf.get_double("mpc.terminal_epsilon", c.epsilon);
  std::string rm = cf.get_string("mpc.reference_mode", "known");
  if (rm == "known") c.reference_mode = ReferenceMode::Known;
  else if (rm == "model") c.reference_mode = ReferenceMode::Model;
  else throw config_error("mpc.reference_mode: expected known or model, got '" + rm + "'");
  c.projected = cf.get_bool("mpc.projected_predictor", c.projected);
  c.max_iter = cf.get_int("mpc.solver_max_iter", c.max_iter);
  c.tol = cf.get_double("mpc.solver_tol", c.tol);
  c.al_outer = cf.get_int("mpc.al_outer_iter", c.al_outer);
  c.al_growth = cf.get_double("mpc.al_penalty_growth", c.al_growth);
  c.dare.tol = cf.get_double("mpc.dare_tol", c.dare.tol);
  c.dare.max_iter = cf.get_int("mpc.dare_max_iter", c.dare.max_iter);
  std::string dm = cf.get_string("mpc.dare_method", "doubling");
  if (dm == "doubling") c.dare.method = DareMethod::Doubling;
  else if (dm == "fixed_point") c.dare.method = DareMethod::FixedPoint;
  else throw config_error("mpc.dare_method: expected doubling or fixed_point, got '" + dm + "'");
  c.dare.damping = cf.get_double("mpc.dare_damping", c.dare.damping);
  c.validate();
  return c;
}

Predictor Predictor::from_model(const KoopmanModel& m, bool projected) {
  m.validate();
  Predictor p;
  p.embedding = m.dict.embedding;
  for (int s = 0; s < 2; ++s) {
    if (projected) {
      Eigen::Matrix3d A;
      Eigen::MatrixXd B;
      projected_matrices(m, s, A, B);
      p.A[s] = A;
      p.B[s] = B;
    } else {
      p.A[s] = m.phase[s].Kxx;
      p.B[s] = m.phase[s].Kxu;
    }
  }
  p.C = projected ? Eigen::MatrixXd::Identity(3, 3) : m.C;
  return p;
}

double HorizonProblem::quadratic_cost(const Eigen::VectorXd& U) const {
  return 0.5 * U.dot(H * U) + g.dot(U) + c;
}

double HorizonProblem::terminal_value(const Eigen::VectorXd& U) const {
  if (S.size() == 0) return 0.0;
  Eigen::VectorXd d = Gt * U + dt;
  return d.dot(S * d);
}

double HorizonProblem::state_violation(const Eigen::VectorXd& U) const {
  Eigen::VectorXd a = Pa * U + pa, v = Pv * U + pv;
  double worst = 0.0;
  for (int j = 0; j < T; ++j) {
    worst = std::max({worst, a[j] - theta_max, theta_min - a[j],
                      std::abs(v[j]) - velocity_max});
  }
  return worst;
}

HorizonProblem build_horizon_problem(const Predictor& p, const HorizonData& d,
                                     const MpcConfig& cfg,
                                     const Eigen::MatrixXd& S) {
  const int T = cfg.horizon, n = p.n(), L = p.nu();
  if (d.psi0.size() != n) throw data_error("predictor state has the wrong size");
  if (static_cast<int>(d.sigma.size()) < T + 1 ||
      static_cast<int>(d.theta_d.size()) < T + 1 ||
      static_cast<int>(d.theta_dot_d.size()) < T + 1)
    throw data_error("horizon data shorter than the horizon");
  if (static_cast<int>(d.u_past.size()) < L - 1)
    throw data_error("not enough past inputs for the input embedding");

  HorizonProblem qp;
  qp.T = T;
  qp.row_phase.assign(d.sigma.begin(), d.sigma.begin() + T);
  qp.lo.resize(T);
  qp.hi.resize(T);
  for (int j = 0; j < T; ++j) {
    qp.lo[j] = cfg.u_min[idx(d.sigma[j])];
    qp.hi[j] = cfg.u_max[idx(d.sigma[j])];
  }

  // Forward condensation; past inputs enter the affine part.
  Eigen::VectorXd Fj = d.psi0;
  Eigen::MatrixXd Gj = Eigen::MatrixXd::Zero(n, T);
  qp.F.reserve(T);
  qp.Gamma.reserve(T);
  for (int j = 0; j < T; ++j) {
    const int s = idx(d.sigma[j]);
    Eigen::VectorXd Fn = p.A[s] * Fj;
    Eigen::MatrixXd Gn = p.A[s] * Gj;
    for (int i = 0; i < L; ++i) {
      if (j - i >= 0) Gn.col(j - i) += p.B[s].col(i);
      else Fn += p.B[s].col(i) * d.u_past[i - j - 1];
    }
    Fj = std::move(Fn);
    Gj = std::move(Gn);
    qp.F.push_back(Fj);
    qp.Gamma.push_back(Gj);
  }

  const Eigen::RowVectorXd c_e = p.C.row(0), c_v = p.C.row(1);
  const Eigen::RowVectorXd c_a = p.C.row(0) + p.C.row(2);
  qp.Pa.resize(T, T);
  qp.Pv.resize(T, T);
  qp.pa.resize(T);
  qp.pv.resize(T);
  for (int j = 1; j <= T; ++j) {
    qp.Pa.row(j - 1) = c_a * qp.Gamma[j - 1];
    qp.pa[j - 1] = c_a.dot(qp.F[j - 1]);
    qp.Pv.row(j - 1) = c_v * qp.Gamma[j - 1];
    qp.pv[j - 1] = c_v.dot(qp.F[j - 1]) + d.theta_dot_d[j];
  }

  qp.H = Eigen::MatrixXd::Zero(T, T);
  qp.g = Eigen::VectorXd::Zero(T);
  qp.c = 0.0;
  const int last = cfg.terminal_cost ? T - 1 : T;
  Eigen::MatrixXd M(2, T);
  Eigen::Vector2d m0;
  for (int j = 1; j <= last; ++j) {
    if (cfg.reference_mode == ReferenceMode::Known) {
      M.row(0) = qp.Pa.row(j - 1);
      m0[0] = qp.pa[j - 1] - d.theta_d[j];
    } else {
      M.row(0) = c_e * qp.Gamma[j - 1];
      m0[0] = c_e.dot(qp.F[j - 1]);
    }
    M.row(1) = c_v * qp.Gamma[j - 1];
    m0[1] = c_v.dot(qp.F[j - 1]);
    Eigen::MatrixXd QM = cfg.Q * M;
    qp.H.noalias() += 2.0 * M.transpose() * QM;
    qp.g.noalias() += 2.0 * QM.transpose() * m0;
    qp.c += m0.dot(cfg.Q * m0);
  }
  for (int j = 0; j < T; ++j) qp.H(j, j) += 2.0 * cfg.R[idx(d.sigma[j])];

  // In known-reference mode the reference coordinate at the horizon end is
  // the known one, so only the error rows carry a deviation.
  qp.Gt = Eigen::MatrixXd::Zero(3, T);
  qp.dt = Eigen::VectorXd::Zero(3);
  if (cfg.reference_mode == ReferenceMode::Known) {
    qp.Gt.row(0) = qp.Pa.row(T - 1);
    qp.dt[0] = qp.pa[T - 1] - d.theta_d[T];
    qp.Gt.row(1) = c_v * qp.Gamma[T - 1];
    qp.dt[1] = c_v.dot(qp.F[T - 1]);
  } else {
    qp.Gt = p.C * qp.Gamma[T - 1];
    qp.dt = p.C * qp.F[T - 1];
  }
  if (cfg.terminal_cost || cfg.terminal_mode != ConstraintMode::Off) {
    if (S.rows() != 3 || S.cols() != 3) throw data_error("terminal weight must be 3 x 3");
    qp.S = S;
  }
  if (cfg.terminal_cost) {
    Eigen::MatrixXd SG = S * qp.Gt;
    qp.H.noalias() += 2.0 * qp.Gt.transpose() * SG;
    qp.g.noalias() += 2.0 * SG.transpose() * qp.dt;
    qp.c += qp.dt.dot(S * qp.dt);
  }
  qp.H = 0.5 * (qp.H + qp.H.transpose());

  qp.state_mode = cfg.state_mode;
  qp.terminal_mode = cfg.epsilon > 0 ? cfg.terminal_mode : ConstraintMode::Off;
  qp.state_weight = cfg.state_weight;
  qp.terminal_weight = cfg.terminal_weight;
  qp.epsilon = cfg.epsilon;
  qp.theta_min = cfg.theta_min;
  qp.theta_max = cfg.theta_max;
  qp.velocity_max = cfg.velocity_max;
  return qp;
}

namespace {

// Inequality constraints g(U) <= 0 in a fixed order: angle upper/lower,
// velocity upper/lower for each step, then the terminal set.
struct Penalty {
  const HorizonProblem& qp;
  bool use_state, use_terminal;
  Eigen::VectorXd mu;  // multipliers, 4T + 1
  double rho_state, rho_terminal;

  Penalty(const HorizonProblem& q, bool hard_state, bool hard_terminal)
      : qp(q),
        use_state(q.state_mode != ConstraintMode::Off),
        use_terminal(q.terminal_mode != ConstraintMode::Off && q.S.size() > 0),
        mu(Eigen::VectorXd::Zero(4 * q.T + 1)) {
    // Soft mode is the multiplier-free special case w * max(0, g)^2.
    rho_state = 2.0 * q.state_weight;
    rho_terminal = 2.0 * q.terminal_weight;
    if (hard_state) rho_state = std::max(rho_state, 1.0);
    if (hard_terminal) rho_terminal = std::max(rho_terminal, 1.0);
  }

  Eigen::VectorXd constraints(const Eigen::VectorXd& U) const {
    const int T = qp.T;
    Eigen::VectorXd out(4 * T + 1);
    Eigen::VectorXd a = qp.Pa * U + qp.pa, v = qp.Pv * U + qp.pv;
    out.segment(0, T) = a.array() - qp.theta_max;
    out.segment(T, T) = qp.theta_min - a.array();
    out.segment(2 * T, T) = v.array() - qp.velocity_max;
    out.segment(3 * T, T) = -qp.velocity_max - v.array();
    out[4 * T] = qp.terminal_value(U) - qp.epsilon;
    return out;
  }

  // Value and gradient of sum (rho/2) max(0, g + mu/rho)^2 - mu^2/(2 rho).
  double eval(const Eigen::VectorXd& U, Eigen::VectorXd* grad) const {
    const int T = qp.T;
    double val = 0.0;
    if (grad) grad->setZero(U.size());
    if (use_state && rho_state > 0) {
      Eigen::VectorXd a = qp.Pa * U + qp.pa, v = qp.Pv * U + qp.pv;
      Eigen::VectorXd wa = Eigen::VectorXd::Zero(T), wv = Eigen::VectorXd::Zero(T);
      auto term = [&](double gval, double m, double sign, double& w) {
        double s = gval + m / rho_state;
        val -= m * m / (2.0 * rho_state);
        if (s > 0) {
          val += 0.5 * rho_state * s * s;
          w += sign * rho_state * s;
        }
      };
      for (int j = 0; j < T; ++j) {
        term(a[j] - qp.theta_max, mu[j], 1.0, wa[j]);
        term(qp.theta_min - a[j], mu[T + j], -1.0, wa[j]);
        term(v[j] - qp.velocity_max, mu[2 * T + j], 1.0, wv[j]);
        term(-qp.velocity_max - v[j], mu[3 * T + j], -1.0, wv[j]);
      }
      if (grad) *grad += qp.Pa.transpose() * wa + qp.Pv.transpose() * wv;
    }
    if (use_terminal && rho_terminal > 0) {
      Eigen::VectorXd d = qp.Gt * U + qp.dt;
      Eigen::VectorXd Sd = qp.S * d;
      double m = mu[4 * T];
      double s = d.dot(Sd) - qp.epsilon + m / rho_terminal;
      val -= m * m / (2.0 * rho_terminal);
      if (s > 0) {
        val += 0.5 * rho_terminal * s * s;
        if (grad) *grad += (2.0 * rho_terminal * s) * (qp.Gt.transpose() * Sd);
      }
    }
    return val;
  }

  // eval(U + step) - eval(U), formed per constraint from the increment of
  // g so that large penalty weights do not cancel.
  double change(const Eigen::VectorXd& U, const Eigen::VectorXd& step) const {
    const int T = qp.T;
    double out = 0.0;
    auto term = [](double rho, double s_old, double dg) {
      double a = std::max(0.0, s_old), b = std::max(0.0, s_old + dg);
      double diff = (a > 0 && b > 0) ? dg : b - a;
      return 0.5 * rho * diff * (a + b);
    };
    if (use_state && rho_state > 0) {
      Eigen::VectorXd a = qp.Pa * U + qp.pa, v = qp.Pv * U + qp.pv;
      Eigen::VectorXd da = qp.Pa * step, dv = qp.Pv * step;
      const double r = rho_state;
      for (int j = 0; j < T; ++j) {
        out += term(r, a[j] - qp.theta_max + mu[j] / r, da[j]);
        out += term(r, qp.theta_min - a[j] + mu[T + j] / r, -da[j]);
        out += term(r, v[j] - qp.velocity_max + mu[2 * T + j] / r, dv[j]);
        out += term(r, -qp.velocity_max - v[j] + mu[3 * T + j] / r, -dv[j]);
      }
    }
    if (use_terminal && rho_terminal > 0) {
      Eigen::VectorXd d = qp.Gt * U + qp.dt, dd = qp.Gt * step;
      double dg = (2.0 * d + dd).dot(qp.S * dd);
      const double r = rho_terminal;
      out += term(r, d.dot(qp.S * d) - qp.epsilon + mu[4 * T] / r, dg);
    }
    return out;
  }
};

Eigen::VectorXd project(const Eigen::VectorXd& U, const HorizonProblem& qp) {
  return U.cwiseMax(qp.lo).cwiseMin(qp.hi);
}

struct InnerResult {
  Eigen::VectorXd U;
  double value = 0.0, residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

InnerResult projected_gradient(const HorizonProblem& qp, const Penalty& pen,
                               Eigen::VectorXd U, int max_iter, double tol,
                               std::vector<double>* trace) {
  // Objective pieces at a point: quadratic gradient, penalty value and
  // penalty gradient. Decreases are formed from these directly instead of
  // differencing objective values, which cancel near the optimum.
  struct Point {
    Eigen::VectorXd U, gq, gp;
    double pv = 0.0;
    Eigen::VectorXd grad() const { return gq + gp; }
  };
  auto at = [&](Eigen::VectorXd x) {
    Point p;
    p.gq = qp.H * x + qp.g;
    p.pv = pen.eval(x, &p.gp);
    p.U = std::move(x);
    return p;
  };

  InnerResult r;
  Point cur = at(project(U, qp));
  double f = qp.quadratic_cost(cur.U) + cur.pv;
  if (trace) trace->push_back(f);
  double alpha = 1.0 / std::max(qp.H.diagonal().sum(), 1e-12);
  Eigen::VectorXd grad = cur.grad(), U_prev, g_prev;
  int it = 0;
  double res = (cur.U - project(cur.U - grad, qp)).lpNorm<Eigen::Infinity>();
  for (; it < max_iter && res > tol; ++it) {
    if (it > 0) {
      Eigen::VectorXd s = cur.U - U_prev, y = grad - g_prev;
      double sy = s.dot(y);
      if (sy > 0) alpha = std::clamp(s.squaredNorm() / sy, 1e-12, 1e12);
    }
    Point next;
    double decrease = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      Eigen::VectorXd step = project(cur.U - alpha * grad, qp) - cur.U;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      next = at(cur.U + step);
      decrease = step.dot(cur.gq + 0.5 * (qp.H * step)) + pen.change(cur.U, step);
      if (decrease <= 1e-4 * grad.dot(step)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no representable descent step left
    U_prev = std::move(cur.U);
    g_prev = std::move(grad);
    cur = std::move(next);
    grad = cur.grad();
    f += std::min(decrease, 0.0);
    if (trace) trace->push_back(f);
    res = (cur.U - project(cur.U - grad, qp)).lpNorm<Eigen::Infinity>();
  }
  r.value = qp.quadratic_cost(cur.U) + cur.pv;
  r.U = std::move(cur.U);
  r.residual = res;
  r.iterations = it;
  r.converged = res <= tol;
  return r;
}

}  // namespace

MpcSolution solve_horizon(const HorizonProblem& qp, const Eigen::VectorXd& warm,
                          const MpcConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  const bool hard_state = qp.state_mode == ConstraintMode::Hard;
  const bool hard_terminal = qp.terminal_mode == ConstraintMode::Hard && qp.S.size() > 0;
  Penalty pen(qp, hard_state, hard_terminal);

  Eigen::VectorXd U = warm.size() == qp.T ? warm : Eigen::VectorXd(qp.lo);
  MpcSolution sol;
  InnerResult in;
  const int outer = (hard_state || hard_terminal) ? cfg.al_outer : 1;
  bool feasible = true;
  for (int o = 0; o < outer; ++o) {
    in = projected_gradient(qp, pen, U, cfg.max_iter, cfg.tol, o == 0 ? &sol.cost_trace : nullptr);
    sol.iterations += in.iterations;
    U = in.U;
    if (outer == 1) break;
    Eigen::VectorXd gv = pen.constraints(U);
    const int T = qp.T;
    double viol_state = hard_state ? std::max(0.0, gv.head(4 * T).maxCoeff()) : 0.0;
    double viol_term = hard_terminal ? std::max(0.0, gv[4 * T]) : 0.0;
    feasible = viol_state <= 1e-6 && viol_term <= 1e-6 * std::max(1.0, qp.epsilon);
    if (feasible && in.converged) break;
    for (int i = 0; i < 4 * T; ++i)
      if (hard_state) pen.mu[i] = std::max(0.0, pen.mu[i] + pen.rho_state * gv[i]);
    if (hard_terminal)
      pen.mu[4 * T] = std::max(0.0, pen.mu[4 * T] + pen.rho_terminal * gv[4 * T]);
    if (hard_state && viol_state > 1e-6) pen.rho_state *= cfg.al_growth;
    if (hard_terminal && viol_term > 1e-6) pen.rho_terminal *= cfg.al_growth;
  }

  sol.u = U;
  sol.cost = in.value;
  sol.residual = in.residual;
  sol.converged = in.converged && feasible;
  sol.terminal_value = qp.terminal_value(U);
  sol.terminal_ok = qp.epsilon <= 0 || sol.terminal_value <= qp.epsilon * (1 + 1e-9);
  sol.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

Eigen::VectorXd solve_dense_unconstrained(const HorizonProblem& qp) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(qp.H);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw numerics_error("condensed Hessian is not positive definite");
  return ldlt.solve(-qp.g);
}

void terminal_weights(const Predictor& p, const MpcConfig& cfg,
                      Eigen::MatrixXd& S_stance, Eigen::MatrixXd& S_swing) {
  Eigen::MatrixXd Qz = Eigen::MatrixXd::Zero(3, 3);
  Qz.topLeftCorner<2, 2>() = cfg.Q;
  Eigen::MatrixXd Cpinv = p.C.completeOrthogonalDecomposition().pseudoInverse();
  for (int s = 0; s < 2; ++s) {
    Eigen::MatrixXd R(1, 1);
    R(0, 0) = cfg.R[s];
    Eigen::MatrixXd A = p.C * p.A[s] * Cpinv;
    Eigen::MatrixXd B = p.C * p.B[s].col(0);
    DareResult d = solve_dare(A, B, Qz, R, cfg.dare);
    (s == 0 ? S_stance : S_swing) = d.S;
  }
}

MpcController::MpcController(const KoopmanModel& model, const MpcConfig& cfg,
                             const GaitPhaseSchedule& schedule,
                             const ReferenceParams& ref)
    : model_(model), cfg_(cfg), schedule_(schedule), ref_(ref),
      history_(model.dict) {
  cfg_.validate();
  schedule_.validate();
  ref_.validate();
  if (!cfg_.dictionary.empty() && cfg_.dictionary != model_.dict.name())
    throw config_error("controller expects dictionary '" + cfg_.dictionary +
                       "' but the model uses '" + model_.dict.name() + "'");
  pred_ = Predictor::from_model(model_, cfg_.projected);
  if (cfg_.terminal_cost || cfg_.terminal_mode != ConstraintMode::Off) {
    terminal_weights(pred_, cfg_, S_[0], S_[1]);
  } else {
    S_[0] = S_[1] = Eigen::MatrixXd::Zero(3, 3);
  }
  reset();
}

void MpcController::reset() {
  history_.clear();
  u_past_.assign(std::max(0, pred_.nu() - 1), 0.0);
  warm_.resize(0);
}

HorizonData MpcController::horizon_data(const AnkleState& s) const {
  const int T = cfg_.horizon;
  const double dt = cfg_.sample_period;
  HorizonData h;
  h.sigma.resize(T + 1);
  h.theta_d.resize(T + 1);
  h.theta_dot_d.resize(T + 1);
  for (int j = 0; j <= T; ++j) {
    double t = s.t + j * dt;
    ReferenceSample r = reference_at(t, schedule_, ref_);
    h.sigma[j] = phase_indicator(t, schedule_);
    h.theta_d[j] = r.theta_d;
    h.theta_dot_d[j] = r.theta_dot_d;
  }
  Eigen::Vector3d z = augment_state(s, {h.theta_d[0], h.theta_dot_d[0]});
  if (cfg_.projected) {
    h.psi0 = z;
  } else {
    LiftHistory hist = history_;
    double u_last = u_past_.empty() ? 0.0 : u_past_.front();
    if (hist.size() == 0) hist.prefill(z, h.theta_dot_d[0], u_last);
    h.psi0 = lift(z, h.theta_dot_d[0], 0.0, hist, model_.dict).head(pred_.n());
  }
  h.u_past = u_past_;
  return h;
}

MpcSolution MpcController::step(const AnkleState& s) {
  HorizonData h = horizon_data(s);
  HorizonProblem qp = build_horizon_problem(pred_, h, cfg_, S_[idx(h.sigma[cfg_.horizon])]);
  Eigen::VectorXd warm;
  if (warm_.size() == cfg_.horizon) {
    warm.resize(cfg_.horizon);
    warm.head(cfg_.horizon - 1) = warm_.tail(cfg_.horizon - 1);
    warm[cfg_.horizon - 1] = warm_[cfg_.horizon - 1];
  } else {
    warm = 0.5 * (qp.lo + qp.hi);
  }
  MpcSolution sol = solve_horizon(qp, warm, cfg_);
  warm_ = sol.u;

  // Predicted z trajectory for diagnostics.
  sol.z.resize(3, cfg_.horizon);
  for (int j = 0; j < cfg_.horizon; ++j)
    sol.z.col(j) = pred_.C * (qp.F[j] + qp.Gamma[j] * sol.u);

  const double u0 = sol.u[0];
  if (!cfg_.projected) {
    Eigen::Vector3d z = augment_state(s, {h.theta_d[0], h.theta_dot_d[0]});
    if (history_.size() == 0)
      history_.prefill(z, h.theta_dot_d[0], u_past_.empty() ? 0.0 : u_past_.front());
    history_.push(z, h.theta_dot_d[0], u0);
  }
  if (!u_past_.empty()) {
    u_past_.insert(u_past_.begin(), u0);
    u_past_.pop_back();
  }
  return sol;
}

RunReport closed_loop_run(const PlantParams& plant, const KoopmanModel& model,
                          const MpcConfig& cfg_in, const GaitPhaseSchedule& schedule,
                          const ReferenceParams& ref, double duration,
                          const AnkleState& initial) {
  if (!(duration > 0)) throw config_error("run duration must be > 0");
  MpcConfig cfg = cfg_in;
  if (cfg.terminal_mode != ConstraintMode::Off && cfg.epsilon <= 0)
    cfg.epsilon = calibrate_epsilon(plant, model, cfg, schedule, ref,
                                    std::min(duration, 2.0 * schedule.cycle_period()));
  MpcController ctrl(model, cfg, schedule, ref);
  const double dt = cfg.sample_period;
  const auto n = static_cast<long>(std::llround(duration / dt));
  RunReport rep;
  rep.log.reserve(static_cast<std::size_t>(n));
  AnkleState s = initial;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(n));
  double se[2] = {0, 0};
  long cnt[2] = {0, 0};
  std::vector<double> cycle_se, cycle_n;
  const double period = schedule.cycle_period();
  for (long k = 0; k < n; ++k) {
    MpcSolution sol = ctrl.step(s);
    const double u = sol.u[0];
    const int sigma = phase_indicator(s.t, schedule);
    ReferenceSample r = reference_at(s.t, schedule, ref);
    rep.log.push_back({s.t, s.theta, r.theta_d, s.theta_dot, r.theta_dot_d, u,
                       sigma, sol.cost, sol.solve_ms, sol.converged});
    times.push_back(sol.solve_ms);
    if (!sol.converged) ++rep.unconverged;
    if (u < cfg.u_min[idx(sigma)] - 1e-9 || u > cfg.u_max[idx(sigma)] + 1e-9)
      ++rep.input_violations;
    if (s.theta < cfg.theta_min || s.theta > cfg.theta_max ||
        std::abs(s.theta_dot) > cfg.velocity_max)
      ++rep.state_violations;
    double e = s.theta - r.theta_d;
    se[idx(sigma)] += e * e;
    ++cnt[idx(sigma)];
    auto c = static_cast<std::size_t>(std::floor((s.t - initial.t) / period + 1e-9));
    if (c >= cycle_se.size()) {
      cycle_se.resize(c + 1, 0.0);
      cycle_n.resize(c + 1, 0.0);
    }
    cycle_se[c] += e * e;
    cycle_n[c] += 1.0;
    AnkleState next = plant_step(s, u, sigma, dt, plant);
    if (phase_indicator(next.t, schedule) != sigma)
      rep.max_switch_jump = std::max(rep.max_switch_jump, std::abs(next.theta - s.theta));
    s = next;
  }
  rep.rmse_pf = cnt[0] ? std::sqrt(se[0] / cnt[0]) : 0.0;
  rep.rmse_df = cnt[1] ? std::sqrt(se[1] / cnt[1]) : 0.0;
  rep.rmse = std::sqrt((se[0] + se[1]) / std::max<long>(1, cnt[0] + cnt[1]));
  std::vector<double> cr;
  for (std::size_t c = 0; c < cycle_se.size(); ++c)
    if (cycle_n[c] > 0.5 * period / dt) cr.push_back(std::sqrt(cycle_se[c] / cycle_n[c]));
  if (!cr.empty()) {
    double m = 0.0;
    for (double v : cr) m += v;
    m /= static_cast<double>(cr.size());
    double var = 0.0;
    for (double v : cr) var += (v - m) * (v - m);
    rep.cycle_rmse_mean = m;
    rep.cycle_rmse_sd = cr.size() > 1 ? std::sqrt(var / static_cast<double>(cr.size() - 1)) : 0.0;
  }
  rep.solve_ms_median = percentile(times, 0.5);
  rep.solve_ms_p95 = percentile(times, 0.95);
  rep.solve_ms_max = times.empty() ? 0.0 : *std::max_element(times.begin(), times.end());
  return rep;
}

double calibrate_epsilon(const PlantParams& plant, const KoopmanModel& model,
                         const MpcConfig& cfg_in, const GaitPhaseSchedule& schedule,
                         const ReferenceParams& ref, double duration) {
  MpcConfig cfg = cfg_in;
  cfg.terminal_mode = ConstraintMode::Off;
  cfg.epsilon = 0.0;
  MpcController ctrl(model, cfg, schedule, ref);
  const double dt = cfg.sample_period;
  const auto n = static_cast<long>(std::llround(duration / dt));
  ReferenceSample r0 = reference_at(schedule.t_start, schedule, ref);
  AnkleState s{r0.theta_d, r0.theta_dot_d, schedule.t_start, 0.0};
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    MpcSolution sol = ctrl.step(s);
    v.push_back(sol.terminal_value);
    s = plant_step(s, sol.u[0], phase_indicator(s.t, schedule), dt, plant);
  }
  double eps = percentile(v, 0.95);
  return eps > 0 ? eps : 1e-9;
}

void write_run_log(const RunReport& r, const std::string& path, bool with_timing) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open " + path + " for writing");
  f << "t,theta,theta_d,theta_dot,theta_dot_d,u,sigma,cost,solve_ms,converged\n";
  char buf[512];
  for (const RunLogRow& row : r.log) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.6g,%d\n",
                  row.t, row.theta, row.theta_d, row.theta_dot, row.theta_dot_d, row.u,
                  row.sigma, row.cost, with_timing ? row.solve_ms : 0.0,
                  row.converged ? 1 : 0);
    f << buf;
  }
  if (!f) throw io_error("failed writing " + path);
}

}  // namespace kmpc
