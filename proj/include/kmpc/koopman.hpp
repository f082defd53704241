#pragma once

#include <Eigen/Dense>
#include <deque>
#include <string>
#include <vector>

#include "kmpc/plant.hpp"

namespace kmpc {

enum class DictionaryKind { State, Custom, Trig };

// Lifting functions shared by both phases. The per-sample lift acts on
// the augmented state z = [e_theta, e_theta_dot, theta_d] together with the
// reference velocity theta_dot_d; with embedding length L the lifted state
// stacks the L most recent per-sample lifts (newest first) and the input
// lift stacks the L most recent inputs.
struct ObservableDictionary {
  DictionaryKind kind = DictionaryKind::Custom;
  int embedding = 1;
  std::vector<double> trig_scales{1.0, 2.0};
  double trig_velocity_scale = 0.1;

  static ObservableDictionary make(const std::string& name, int embedding = 1);
  std::string name() const;
  void validate() const;

  int sample_dim() const;  // per-sample state-lift size
  int state_dim() const { return embedding * sample_dim(); }  // n_x
  int input_dim() const { return embedding; }                 // n_u
  int lifted_dim() const { return state_dim() + input_dim(); }  // P

  void lift_sample(const Eigen::Vector3d& z, double theta_dot_d,
                   double* out) const;
  Eigen::VectorXd lift_sample(const Eigen::Vector3d& z,
                              double theta_dot_d) const;
  std::vector<std::string> feature_names() const;
  std::string describe() const;

  bool operator==(const ObservableDictionary& o) const {
    return kind == o.kind && embedding == o.embedding &&
           trig_scales == o.trig_scales &&
           trig_velocity_scale == o.trig_velocity_scale;
  }
};

// Past samples needed by a delay-embedded lift, newest first.
class LiftHistory {
 public:
  explicit LiftHistory(const ObservableDictionary& d) : dict_(d) {}
  // Replicate one sample until the buffer can serve a full embedding.
  void prefill(const Eigen::Vector3d& z, double theta_dot_d, double u);
  void push(const Eigen::Vector3d& z, double theta_dot_d, double u);
  std::size_t size() const { return feats_.size(); }
  void clear();

 private:
  friend Eigen::VectorXd lift(const Eigen::Vector3d&, double, double,
                              const LiftHistory&, const ObservableDictionary&);
  ObservableDictionary dict_;
  std::deque<Eigen::VectorXd> feats_;
  std::deque<double> inputs_;
};

// Psi = [Psi_x; Psi_u] for the current sample plus L - 1 stored samples.
Eigen::VectorXd lift(const Eigen::Vector3d& z, double theta_dot_d, double u,
                     const LiftHistory& history,
                     const ObservableDictionary& dict);

// Lifted samples of one episode with warm-up by replication of sample 0.
struct LiftedEpisode {
  Eigen::MatrixXd X;  // n_x x n
  Eigen::MatrixXd U;  // n_u x n
  Eigen::MatrixXd Z;  // 3 x n
};
LiftedEpisode lift_episode(const Episode& ep, const TrajectoryDataset& ds,
                           const ObservableDictionary& dict);

struct SnapshotMatrices {
  Eigen::MatrixXd Dk;   // P x M
  Eigen::MatrixXd Dk1;  // P x M
  int phase = 0;
  // (episode, k) of the first sample of every pair, for hygiene checks.
  std::vector<std::pair<int, int>> origin;
  long M() const { return static_cast<long>(Dk.cols()); }
};

SnapshotMatrices build_snapshots(const TrajectoryDataset& ds,
                                 const ObservableDictionary& dict, int phase,
                                 Execution exec = Execution::Parallel);

struct FitOptions {
  double ridge = 0.0;    // relative to each lifted coordinate's second moment
  double cutoff = 1e-10; // singular values below cutoff * s_max are dropped
  bool scale = true;     // fit in coordinates normalised by sqrt(diag G)
  Execution exec = Execution::Parallel;
};

struct FitDiagnostics {
  long samples = 0;
  double residual = 0.0;   // state rows, relative Frobenius
  double cond_G = 0.0;
  int rank = 0;
  bool rank_deficient = false;
};

struct EdmdFit {
  Eigen::MatrixXd K;  // P x P
  FitDiagnostics diag;
};

EdmdFit fit_edmd(const SnapshotMatrices& snap, const FitOptions& opt = {},
                 int state_rows = -1);

// Top block row [K_xx | K_xu] of the lifted operator.
void partition_operator(const Eigen::MatrixXd& K,
                        const ObservableDictionary& dict, Eigen::MatrixXd& Kxx,
                        Eigen::MatrixXd& Kxu);

struct PhaseOperator {
  Eigen::MatrixXd Kxx;
  Eigen::MatrixXd Kxu;
  FitDiagnostics diag;
};

struct KoopmanModel {
  ObservableDictionary dict;
  PhaseOperator phase[2];  // 0 = stance (P), 1 = swing (D)
  Eigen::MatrixXd C;       // 3 x n_x
  double projection_rmse = 0.0;
  FitOptions options;
  std::string config_hash;

  int nx() const { return dict.state_dim(); }
  int nu() const { return dict.input_dim(); }
  // Row vector mapping psi to the physical angle e_theta + theta_d.
  Eigen::RowVectorXd angle_row() const { return C.row(0) + C.row(2); }
  Eigen::RowVectorXd velocity_error_row() const { return C.row(1); }
  void validate() const;
};

// Least-squares recovery map. Regressors are the current-sample block of
// Psi_x; delayed copies get zero columns.
Eigen::MatrixXd fit_projection(const TrajectoryDataset& ds,
                               const ObservableDictionary& dict,
                               double* rmse = nullptr);

KoopmanModel train_model(const TrajectoryDataset& train,
                         const ObservableDictionary& dict,
                         const FitOptions& opt = {});

struct Prediction {
  Eigen::VectorXd psi;
  Eigen::Vector3d z;
};

Prediction predict_step(const KoopmanModel& m, const Eigen::VectorXd& psi,
                        const Eigen::VectorXd& u_lift, int sigma);

// Iterates predict_step H times; column j of the result is z_{j+1}.
// u_past holds u_{-1}, u_{-2}, ... (at least L - 1 entries); u_future
// holds u_0 .. u_{H-1}.
Eigen::MatrixXd rollout_predict(const KoopmanModel& m,
                                const Eigen::VectorXd& psi0,
                                const std::vector<double>& u_past,
                                const std::vector<double>& u_future,
                                const std::vector<int>& sigma, int H);

// Projected predictor matrices using the right inverse of C.
void projected_matrices(const KoopmanModel& m, int sigma, Eigen::Matrix3d& A,
                        Eigen::MatrixXd& B);

struct PhaseMetric {
  std::string phase;  // "PF", "DF" or "all"
  double rmse = 0.0;
  double sd = 0.0;    // spread of per-window RMSE
  long count = 0;
};

struct PredictionReport {
  int horizon = 0;
  std::vector<PhaseMetric> rows;
  const PhaseMetric& get(const std::string& phase) const;
};

// Sliding-window angle prediction error on held-out episodes. Windows
// start at every `stride`-th sample and predict `horizon` steps ahead.
PredictionReport evaluate_prediction(const KoopmanModel& m,
                                     const TrajectoryDataset& test, int horizon,
                                     int stride = 1);

// JSON model files.
void write_model(const KoopmanModel& m, const std::string& path);
KoopmanModel read_model(const std::string& path);

}  // namespace kmpc
