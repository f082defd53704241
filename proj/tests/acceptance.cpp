// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kmpc/dare.hpp"
#include "kmpc/error.hpp"
#include "kmpc/experiment.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/plant.hpp"

namespace fs = std::filesystem;
using namespace kmpc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Shared state built lazily by the criteria that need it.
struct Context {
  fs::path work;
  ExperimentConfig cfg;
  TrajectoryDataset train, test;
  std::map<std::string, KoopmanModel> models;
  std::map<std::string, PredictionReport> reports;
  double pipeline_seconds = 0.0;

  struct Run {
    double period;
    int trial;
    RunReport report;
  };
  std::vector<Run> runs;
  MpcConfig run_cfg;

  const KoopmanModel& model(const std::string& dict, int L) {
    std::string key = dict + "_L" + std::to_string(L);
    auto it = models.find(key);
    if (it == models.end()) {
      it = models.emplace(key, train_model(train, ObservableDictionary::make(dict, L), cfg.fit)).first;
      reports[key] = evaluate_prediction(it->second, test, 199);
    }
    return it->second;
  }
  const PredictionReport& report(const std::string& dict, int L) {
    model(dict, L);
    return reports[dict + "_L" + std::to_string(L)];
  }
};

Outcome exact_recovery() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(1, 1);
  Eigen::Matrix3d A;
  Eigen::Vector3d B;
  for (int i = 0; i < 3; ++i) {
    B[i] = rng.uniform(-1, 1);
    for (int j = 0; j < 3; ++j) A(i, j) = rng.uniform(-1, 1);
  }
  A *= 0.9 / A.eigenvalues().cwiseAbs().maxCoeff();
  ObservableDictionary dict = ObservableDictionary::make("state", 1);
  const int M = 2000;
  SnapshotMatrices snap;
  snap.Dk.resize(4, M);
  snap.Dk1.resize(4, M);
  Eigen::Vector3d x(1, -1, 0.5);
  double u = rng.uniform(-1, 1);
  for (int k = 0; k < M; ++k) {
    Eigen::Vector3d xn = A * x + B * u;
    double un = rng.uniform(-1, 1);
    snap.Dk.col(k) << dict.lift_sample(x, 0.0), u;
    snap.Dk1.col(k) << dict.lift_sample(xn, 0.0), un;
    x = xn;
    u = un;
    if (k % 200 == 199) x = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  }
  // Restarts break the chain; rebuild successors so every pair is exact.
  for (int k = 0; k < M; ++k)
    snap.Dk1.col(k).head(3) = A * snap.Dk.col(k).head(3) + B * snap.Dk(3, k);
  EdmdFit fit = fit_edmd(snap);
  Eigen::MatrixXd AB(3, 4), K = fit.K.topRows(3);
  AB << A, B;
  double err = (K - AB).norm() / AB.norm();
  double secs = seconds_since(t0);
  return {err <= 1e-8 && secs < 1.0, fmt("relative error %.2e, %.3f s", err, secs)};
}

Outcome prediction_threshold(Context& c) {
  const PredictionReport& r = c.report("custom", 1);
  double rmse = r.get("all").rmse;
  int P = c.model("custom", 1).dict.lifted_dim();
  return {P == 13 && rmse <= 0.5 && c.pipeline_seconds < 30.0,
          fmt("P = %.0f, one-cycle rollout RMSE %.3f deg (PF %.3f, DF %.3f)", P, rmse,
              r.get("PF").rmse, r.get("DF").rmse) +
              fmt(", generate+train+evaluate %.3f s", c.pipeline_seconds)};
}

Outcome dictionary_ordering(Context& c) {
  bool ok = true;
  std::string detail;
  for (const char* ph : {"PF", "DF"}) {
    double t = c.report("trig", 1).get(ph).rmse;
    double cu = c.report("custom", 1).get(ph).rmse;
    double s = c.report("state", 1).get(ph).rmse;
    ok = ok && t <= 0.9 * cu && cu <= 0.9 * s;
    detail += std::string(ph) + fmt(" trig %.3f < custom %.3f < state %.3f; ", t, cu, s);
  }
  return {ok, detail.substr(0, detail.size() - 2)};
}

Outcome embedding_ordering(Context& c) {
  double r1 = c.report("custom", 1).get("all").rmse;
  double r8 = c.report("custom", 8).get("all").rmse;
  double r50 = c.report("custom", 50).get("all").rmse;
  return {r8 < r1 && r50 < r8, fmt("L=1 %.4f > L=8 %.4f > L=50 %.4f deg", r1, r8, r50)};
}

Outcome dare_correctness() {
  Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  double s = solve_dare(one, one, one, one).S(0, 0);
  double golden = (1 + std::sqrt(5.0)) / 2;
  bool ok = std::abs(s - golden) <= 1e-9;
  double worst_res = 0, worst_sym = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(5, trial);
    Eigen::MatrixXd A(12, 12), B(12, 2);
    for (int i = 0; i < 12; ++i) {
      for (int j = 0; j < 12; ++j) A(i, j) = rng.uniform(-1, 1);
      B(i, 0) = rng.uniform(-1, 1);
      B(i, 1) = rng.uniform(-1, 1);
    }
    A *= 1.05 / A.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(12, 12), R = Eigen::MatrixXd::Identity(2, 2);
    DareResult d = solve_dare(A, B, Q, R);
    worst_res = std::max(worst_res, dare_residual(A, B, Q, R, d.S));
    worst_sym = std::max(worst_sym, (d.S - d.S.transpose()).cwiseAbs().maxCoeff());
  }
  ok = ok && worst_res <= 1e-10 && worst_sym <= 1e-12;
  return {ok, fmt("scalar |S - phi| = %.1e; 12-dim residual %.1e, asymmetry %.1e",
                  std::abs(s - golden), worst_res, worst_sym)};
}

Outcome lqr_equivalence() {
  KoopmanModel m;
  m.dict = ObservableDictionary::make("state", 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 3), B = Eigen::MatrixXd::Zero(3, 1);
  A.topLeftCorner(2, 2) << 1.0, 0.005, -0.2, 0.97;
  A(2, 2) = 0.5;
  B(1, 0) = 0.4;
  for (int p = 0; p < 2; ++p) {
    m.phase[p].Kxx = A;
    m.phase[p].Kxu = B;
  }
  m.C = Eigen::MatrixXd::Identity(3, 3);
  MpcConfig cfg;
  cfg.dictionary = "state";
  cfg.state_mode = ConstraintMode::Off;
  cfg.terminal_mode = ConstraintMode::Off;
  cfg.reference_mode = ReferenceMode::Model;
  cfg.u_min[0] = cfg.u_min[1] = -1e9;
  cfg.u_max[0] = cfg.u_max[1] = 1e9;
  cfg.max_iter = 20000;
  cfg.tol = 1e-12;
  MpcController ctrl(m, cfg, GaitPhaseSchedule{}, ReferenceParams{0, 0, 0});
  Eigen::MatrixXd Qz = Eigen::MatrixXd::Zero(3, 3);
  Qz.topLeftCorner(2, 2) = cfg.Q;
  Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, cfg.R[0]);
  Eigen::MatrixXd K = lqr_gain(A, B, R, solve_dare(A, B, Qz, R).S);
  Eigen::Vector3d x(8.0, -30.0, 0.0);
  double worst_lqr = 0, worst_dense = 0;
  for (int k = 0; k < 200; ++k) {
    AnkleState s{x[0], x[1], k * cfg.sample_period, 0.0};
    HorizonData h = ctrl.horizon_data(s);
    HorizonProblem qp = build_horizon_problem(ctrl.predictor(), h, cfg, ctrl.terminal_weight(0));
    double dense = solve_dense_unconstrained(qp)[0];
    MpcSolution sol = ctrl.step(s);
    worst_lqr = std::max(worst_lqr, std::abs(sol.u[0] + (K * x)(0, 0)));
    worst_dense = std::max(worst_dense, std::abs(sol.u[0] - dense));
    x = A * x + B * sol.u[0];
  }
  return {worst_lqr <= 1e-6 && worst_dense <= 1e-6,
          fmt("200 steps, max |u - u_lqr| %.1e, max |u - u_dense| %.1e", worst_lqr, worst_dense)};
}

void run_matrix(Context& c) {
  if (!c.runs.empty()) return;
  c.run_cfg = MpcConfig::from_config(ConfigFile::load(std::string(KMPC_CONFIG_DIR) + "/mpc_hard.toml"));
  const KoopmanModel& model = c.model(c.cfg.dictionary, c.cfg.embedding);
  const std::vector<double> periods{4.0, 3.0, 2.0};
  const int trials = c.cfg.trials;
  c.runs.resize(periods.size() * trials);
  std::vector<std::string> errors(c.runs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long j = 0; j < static_cast<long>(c.runs.size()); ++j) {
    std::size_t pi = static_cast<std::size_t>(j) / trials;
    int trial = static_cast<int>(j % trials) + 1;
    try {
      GaitPhaseSchedule sc = c.cfg.schedule.with_period(periods[pi]);
      AnkleState init = trial_initial_state(c.cfg, sc, pi, trial);
      c.runs[j] = {periods[pi], trial,
                   closed_loop_run(c.cfg.plant, model, c.run_cfg, sc, c.cfg.reference, 60.0, init)};
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw numerics_error("acceptance run failed: " + e);
}

double mean_rmse(const Context& c, double period) {
  double s = 0;
  int n = 0;
  for (const auto& r : c.runs)
    if (r.period == period) {
      s += r.report.rmse;
      ++n;
    }
  return n ? s / n : NAN;
}

Outcome closed_loop_tracking(Context& c) {
  run_matrix(c);
  double r4 = mean_rmse(c, 4.0), r3 = mean_rmse(c, 3.0), r2 = mean_rmse(c, 2.0);
  double worst4 = 0;
  for (const auto& r : c.runs)
    if (r.period == 4.0) worst4 = std::max(worst4, r.report.rmse);
  return {worst4 <= 2.0 && r2 >= r3 && r3 >= r4,
          fmt("mean RMSE 4 s %.3f, 3 s %.3f, 2 s %.3f deg; worst 4 s trial %.3f", r4, r3, r2, worst4)};
}

Outcome constraint_safety(Context& c) {
  run_matrix(c);
  long bad_u = 0, bad_theta = 0, samples = 0;
  for (const auto& r : c.runs) {
    for (const RunLogRow& row : r.report.log) {
      ++samples;
      bad_u += row.u < 0.0 || row.u > 30.0;
      bad_theta += row.theta < -20.0 || row.theta > 25.0;
    }
  }
  bool hard = c.run_cfg.state_mode == ConstraintMode::Hard;
  return {hard && bad_u == 0 && bad_theta == 0,
          fmt("%.0f samples in %.0f hard-mode runs: %.0f input and %.0f angle violations",
              static_cast<double>(samples), static_cast<double>(c.runs.size()),
              static_cast<double>(bad_u), static_cast<double>(bad_theta))};
}

Outcome realtime_budget(Context& c) {
  // Timed serially so concurrent runs do not inflate the measurement.
  const KoopmanModel& model = c.model(c.cfg.dictionary, c.cfg.embedding);
  MpcConfig cfg = c.run_cfg;
  GaitPhaseSchedule sc = c.cfg.schedule.with_period(4.0);
  RunReport r = closed_loop_run(c.cfg.plant, model, cfg, sc, c.cfg.reference, 10.0,
                                trial_initial_state(c.cfg, sc, 0, 1));
  std::vector<double> t;
  for (const auto& row : r.log) t.push_back(row.solve_ms);
  std::sort(t.begin(), t.end());
  double median = t[t.size() / 2];
  return {cfg.horizon == 20 && t.size() >= 1000 && median <= 5.0,
          fmt("horizon %.0f, %.0f steps, median %.4f ms, p95 %.4f ms", cfg.horizon,
              static_cast<double>(t.size()), median, t[t.size() * 95 / 100])};
}

Outcome switch_handling(Context& c) {
  const KoopmanModel& model = c.model(c.cfg.dictionary, c.cfg.embedding);
  MpcConfig cfg = c.cfg.mpc;
  MpcController ctrl(model, cfg, c.cfg.schedule, c.cfg.reference);
  // Horizon starting 10 samples before the stance-to-swing switch.
  AnkleState s{-5.0, 10.0, c.cfg.schedule.t_swing - 10 * cfg.sample_period, 0.0};
  HorizonData h = ctrl.horizon_data(s);
  HorizonProblem qp = build_horizon_problem(ctrl.predictor(), h, cfg, ctrl.terminal_weight(1));
  bool structural = true;
  int switches = 0;
  const Predictor& p = ctrl.predictor();
  Eigen::VectorXd U = Eigen::VectorXd::LinSpaced(cfg.horizon, 5, 25);
  Eigen::VectorXd psi = h.psi0;
  for (int j = 0; j < cfg.horizon; ++j) {
    int expected = phase_indicator(s.t + j * cfg.sample_period, c.cfg.schedule);
    structural = structural && qp.row_phase[j] == expected && h.sigma[j] == expected;
    if (j > 0 && qp.row_phase[j] != qp.row_phase[j - 1]) ++switches;
    psi = p.A[expected] * psi + p.B[expected] * Eigen::VectorXd::Constant(1, U[j]);
    Eigen::VectorXd cond = qp.F[j] + qp.Gamma[j] * U;
    structural = structural && (cond - psi).norm() <= 1e-9 * (1 + psi.norm());
  }
  structural = structural && switches == 1 && qp.row_phase.front() == 0 && qp.row_phase.back() == 1;

  // Continuity: an angle step across a switch is bounded by the velocity.
  run_matrix(c);
  double worst_ratio = 0;
  long crossings = 0;
  for (const auto& r : c.runs) {
    const auto& log = r.report.log;
    for (std::size_t k = 1; k < log.size(); ++k) {
      if (log[k].sigma == log[k - 1].sigma) continue;
      ++crossings;
      double bound = cfg.sample_period *
                     std::max(std::abs(log[k].theta_dot), std::abs(log[k - 1].theta_dot));
      worst_ratio = std::max(worst_ratio, std::abs(log[k].theta - log[k - 1].theta) /
                                              std::max(bound, 1e-12));
    }
  }
  bool continuous = crossings > 0 && worst_ratio <= 1.5;
  return {structural && continuous,
          std::string(structural ? "row phases match the schedule" : "row phase mismatch") +
              fmt("; %.0f closed-loop switches, worst |dtheta| / (dt max|theta_dot|) = %.3f",
                  static_cast<double>(crossings), worst_ratio)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    out[fs::relative(e.path(), dir).string()] = os.str();
  }
  return out;
}

Outcome determinism(Context& c) {
  ExperimentConfig cfg = c.cfg;
  cfg.out_dir = (c.work / "pipeline").string();
  cfg.record_solve_time = false;
  cfg.trials = 2;
  cfg.run_duration = 8.0;
  cfg.eval_embeddings = {1, 8};
  fs::remove_all(cfg.out_dir);
  auto pipeline = [&]() {
    std::ostringstream sink;
    CommandOptions opt;
    cmd_generate_data(cfg, opt, sink);
    cmd_train(cfg, opt, sink);
    cmd_evaluate(cfg, opt, sink);
    cmd_run_mpc(cfg, opt, sink);
    cmd_report(cfg, opt, sink);
  };
  pipeline();
  auto first = snapshot(cfg.out_dir);
  pipeline();
  auto second = snapshot(cfg.out_dir);
  long differing = 0;
  std::string which;
  for (const auto& [name, data] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != data) {
      ++differing;
      if (which.empty()) which = name;
    }
  }
  bool ok = differing == 0 && first.size() == second.size() && first.size() >= 10;
  return {ok, fmt("%.0f files across generate-data, train, evaluate, run-mpc, report; %.0f differ",
                  static_cast<double>(first.size()), static_cast<double>(differing)) +
                  (which.empty() ? "" : " (first: " + which + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "kmpc_acceptance";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--work") == 0) work = argv[i + 1];
  fs::create_directories(work);

  Context c;
  c.work = work;
  try {
    c.cfg = ExperimentConfig::load(std::string(KMPC_CONFIG_DIR) + "/experiment.toml");
    auto t0 = std::chrono::steady_clock::now();
    TrajectoryDataset all = generate_training_dataset(c.cfg.plant, c.cfg.schedule, c.cfg.reference,
                                                      c.cfg.protocol, c.cfg.seed);
    split_dataset(all, c.cfg.protocol.train_fraction, c.train, c.test);
    c.model("custom", 1);
    c.pipeline_seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    std::printf("FAIL setup: %s\n", e.what());
    return 1;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"EDMD exact recovery", [] { return exact_recovery(); }},
      {"prediction threshold", [&] { return prediction_threshold(c); }},
      {"dictionary ordering", [&] { return dictionary_ordering(c); }},
      {"embedding ordering", [&] { return embedding_ordering(c); }},
      {"DARE correctness", [] { return dare_correctness(); }},
      {"MPC-LQR equivalence", [] { return lqr_equivalence(); }},
      {"closed-loop tracking", [&] { return closed_loop_tracking(c); }},
      {"constraint safety", [&] { return constraint_safety(c); }},
      {"real-time budget", [&] { return realtime_budget(c); }},
      {"switch handling", [&] { return switch_handling(c); }},
      {"determinism", [&] { return determinism(c); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
