#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "kmpc/config_file.hpp"
#include "kmpc/dare.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {

enum class ConstraintMode { Off, Soft, Hard };

// How the angle error is formed over the horizon. `Known` compares the
// predicted physical angle with the known reference window; `Model` uses
// the model's own error coordinate e_theta = C_1 psi.
enum class ReferenceMode { Known, Model };

struct MpcConfig {
  std::string dictionary;  // model dictionary this controller expects
  int horizon = 20;
  double sample_period = 0.005;
  Eigen::Matrix2d Q = (Eigen::Matrix2d() << 1.0, 0.0, 0.0, 1e-3).finished();
  double R[2] = {1e-3, 1e-3};
  double u_min[2] = {0.0, 0.0};
  double u_max[2] = {30.0, 30.0};
  double theta_min = -20.0;    // deg
  double theta_max = 25.0;     // deg
  double velocity_max = 114.59155902616465;  // deg/s (2 rad/s)
  ConstraintMode state_mode = ConstraintMode::Soft;
  double state_weight = 100.0;
  bool terminal_cost = true;
  ConstraintMode terminal_mode = ConstraintMode::Soft;
  double terminal_weight = 1.0;
  double epsilon = 0.0;  // terminal-set level; <= 0 selects it automatically
  ReferenceMode reference_mode = ReferenceMode::Known;
  bool projected = false;  // use the 3-state projected predictor
  int max_iter = 300;
  double tol = 1e-6;
  int al_outer = 8;          // augmented-Lagrangian outer iterations (hard mode)
  double al_growth = 10.0;   // penalty growth per outer iteration
  DareOptions dare;

  void validate() const;
  static MpcConfig from_config(const ConfigFile& cf);
};

// Linear predictor actually used by the controller: the lifted Koopman
// model, or its projection onto z.
struct Predictor {
  Eigen::MatrixXd A[2];
  Eigen::MatrixXd B[2];
  Eigen::MatrixXd C;  // 3 x n
  int embedding = 1;
  int n() const { return static_cast<int>(A[0].rows()); }
  int nu() const { return static_cast<int>(B[0].cols()); }
  static Predictor from_model(const KoopmanModel& m, bool projected);
};

// Data describing one receding-horizon problem.
struct HorizonData {
  Eigen::VectorXd psi0;          // initial predictor state
  std::vector<double> u_past;    // u_{-1}, u_{-2}, ... (>= nu - 1 entries)
  std::vector<int> sigma;        // T + 1 phase labels, sigma[j] drives step j
  std::vector<double> theta_d;   // T + 1 reference angles (index 0 = now)
  std::vector<double> theta_dot_d;
};

// Condensed problem: psi_j = F_j + Gamma_j U for j = 1..T and
// f(U) = 0.5 U'HU + g'U + c plus constraint penalties.
struct HorizonProblem {
  int T = 0;
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double c = 0.0;
  Eigen::VectorXd lo, hi;           // per-step input bounds
  std::vector<int> row_phase;       // phase used for dynamics step j
  std::vector<Eigen::MatrixXd> Gamma;  // j = 1..T stored at index j - 1
  std::vector<Eigen::VectorXd> F;
  // Affine maps U -> predicted physical angle / velocity for j = 1..T.
  Eigen::MatrixXd Pa, Pv;
  Eigen::VectorXd pa, pv;
  // Terminal deviation of z from the zero-error point, delta = Gt U + dt,
  // and its 3 x 3 weight.
  Eigen::MatrixXd Gt;
  Eigen::VectorXd dt;
  Eigen::MatrixXd S;
  double epsilon = 0.0;
  ConstraintMode state_mode = ConstraintMode::Off;
  ConstraintMode terminal_mode = ConstraintMode::Off;
  double state_weight = 0.0, terminal_weight = 0.0;
  double theta_min = 0, theta_max = 0, velocity_max = 0;

  double quadratic_cost(const Eigen::VectorXd& U) const;
  double terminal_value(const Eigen::VectorXd& U) const;
  // Largest constraint violation of the predicted states (0 if feasible).
  double state_violation(const Eigen::VectorXd& U) const;
};

HorizonProblem build_horizon_problem(const Predictor& p, const HorizonData& d,
                                     const MpcConfig& cfg,
                                     const Eigen::MatrixXd& S);

struct MpcSolution {
  Eigen::VectorXd u;  // optimal input sequence
  Eigen::MatrixXd z;  // predicted z, 3 x T
  double cost = 0.0;
  int iterations = 0;
  double residual = 0.0;  // projected-gradient norm
  bool converged = false;
  bool terminal_ok = false;
  double terminal_value = 0.0;  // delta' S delta at the optimum
  double solve_ms = 0.0;
  std::vector<double> cost_trace;  // accepted iterates
};

// Projected gradient with Barzilai-Borwein steps and Armijo backtracking,
// so accepted iterates never increase the objective. Hard constraints are
// handled by an augmented-Lagrangian outer loop.
MpcSolution solve_horizon(const HorizonProblem& qp, const Eigen::VectorXd& warm,
                          const MpcConfig& cfg);

// Exact unconstrained minimiser of the quadratic part (test oracle).
Eigen::VectorXd solve_dense_unconstrained(const HorizonProblem& qp);

// Terminal weights on z: one DARE per phase on the projected pair
// (C A C^+, C B_0) with state weight diag(Q, 0). B_0 is the current-input
// column; delayed inputs are already fixed when the horizon ends.
void terminal_weights(const Predictor& p, const MpcConfig& cfg,
                      Eigen::MatrixXd& S_stance, Eigen::MatrixXd& S_swing);

class MpcController {
 public:
  MpcController(const KoopmanModel& model, const MpcConfig& cfg,
                const GaitPhaseSchedule& schedule, const ReferenceParams& ref);

  // Solve at the measured state and return the solution; u[0] is applied.
  MpcSolution step(const AnkleState& s);
  void reset();

  const MpcConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& terminal_weight(int sigma) const { return S_[sigma == 0 ? 0 : 1]; }
  const Predictor& predictor() const { return pred_; }
  HorizonData horizon_data(const AnkleState& s) const;
  void set_epsilon(double eps) { cfg_.epsilon = eps; }

 private:
  KoopmanModel model_;
  MpcConfig cfg_;
  GaitPhaseSchedule schedule_;
  ReferenceParams ref_;
  Predictor pred_;
  Eigen::MatrixXd S_[2];
  LiftHistory history_;
  std::vector<double> u_past_;
  Eigen::VectorXd warm_;
};

struct RunLogRow {
  double t, theta, theta_d, theta_dot, theta_dot_d, u;
  int sigma;
  double cost, solve_ms;
  bool converged;
};

struct RunReport {
  std::vector<RunLogRow> log;
  double rmse = 0.0, rmse_pf = 0.0, rmse_df = 0.0;
  double cycle_rmse_mean = 0.0, cycle_rmse_sd = 0.0;
  long input_violations = 0;
  long state_violations = 0;
  long unconverged = 0;
  double solve_ms_median = 0.0, solve_ms_p95 = 0.0, solve_ms_max = 0.0;
  double max_switch_jump = 0.0;  // largest |delta theta| across a phase switch
};

RunReport closed_loop_run(const PlantParams& plant, const KoopmanModel& model,
                          const MpcConfig& cfg, const GaitPhaseSchedule& schedule,
                          const ReferenceParams& ref, double duration,
                          const AnkleState& initial);

// Terminal-set level from unconstrained nominal runs: the 95th percentile
// of the terminal values observed along the run.
double calibrate_epsilon(const PlantParams& plant, const KoopmanModel& model,
                         const MpcConfig& cfg, const GaitPhaseSchedule& schedule,
                         const ReferenceParams& ref, double duration);

void write_run_log(const RunReport& r, const std::string& path, bool with_timing);

}  // namespace kmpc
