#include "kmpc/koopman.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kmpc/error.hpp"
#include "kmpc/kernels.hpp"

namespace kmpc {

ObservableDictionary ObservableDictionary::make(const std::string& name,
                                                int embedding) {
  ObservableDictionary d;
  if (name == "state") d.kind = DictionaryKind::State;
  else if (name == "custom") d.kind = DictionaryKind::Custom;
  else if (name == "trig") d.kind = DictionaryKind::Trig;
  else throw config_error("unknown dictionary '" + name + "' (state, custom, trig)");
  d.embedding = embedding;
  d.validate();
  return d;
}

std::string ObservableDictionary::name() const {
  switch (kind) {
    case DictionaryKind::State: return "state";
    case DictionaryKind::Custom: return "custom";
    case DictionaryKind::Trig: return "trig";
  }
  return "?";
}

void ObservableDictionary::validate() const {
  if (embedding < 1) throw config_error("embedding length must be >= 1");
  if (kind == DictionaryKind::Trig) {
    if (trig_scales.empty()) throw config_error("trig dictionary needs at least one scale");
    for (double w : trig_scales)
      if (!(w > 0) || !std::isfinite(w)) throw config_error("trig scales must be positive");
    if (!(trig_velocity_scale > 0)) throw config_error("trig velocity scale must be positive");
  }
}

int ObservableDictionary::sample_dim() const {
  switch (kind) {
    case DictionaryKind::State: return 3;
    case DictionaryKind::Custom: return 12;
    case DictionaryKind::Trig: return 4 + 6 * static_cast<int>(trig_scales.size());
  }
  return 0;
}

void ObservableDictionary::lift_sample(const Eigen::Vector3d& z,
                                       double theta_dot_d, double* out) const {
  const double e = z[0], ed = z[1], r = z[2];
  switch (kind) {
    case DictionaryKind::State:
      out[0] = e;
      out[1] = ed;
      out[2] = r;
      return;
    case DictionaryKind::Custom: {
      // theta_1 = e_theta, theta_2 = theta_d; dots are their rates.
      const double a = e * kRadPerDeg, b = r * kRadPerDeg;
      out[0] = e;
      out[1] = r;
      out[2] = ed;
      out[3] = theta_dot_d;
      out[4] = std::sin(a);
      out[5] = std::cos(a);
      out[6] = std::sin(b);
      out[7] = std::cos(b);
      out[8] = e * e;
      out[9] = r * r;
      out[10] = e * r;
      out[11] = ed * theta_dot_d;
      return;
    }
    case DictionaryKind::Trig: {
      out[0] = e;
      out[1] = r;
      out[2] = ed;
      out[3] = theta_dot_d;
      // Harmonics of the physical angle, the scaled physical velocity and
      // the reference angle.
      const double args[3] = {(e + r) * kRadPerDeg,
                              (ed + theta_dot_d) * trig_velocity_scale * kRadPerDeg,
                              r * kRadPerDeg};
      int i = 4;
      for (double w : trig_scales) {
        for (double x : args) {
          out[i++] = std::sin(w * x);
          out[i++] = std::cos(w * x);
        }
      }
      return;
    }
  }
}

Eigen::VectorXd ObservableDictionary::lift_sample(const Eigen::Vector3d& z,
                                                  double theta_dot_d) const {
  Eigen::VectorXd v(sample_dim());
  lift_sample(z, theta_dot_d, v.data());
  return v;
}

std::vector<std::string> ObservableDictionary::feature_names() const {
  switch (kind) {
    case DictionaryKind::State: return {"e_theta", "e_theta_dot", "theta_d"};
    case DictionaryKind::Custom:
      return {"e_theta", "theta_d", "e_theta_dot", "theta_dot_d",
              "sin(e_theta)", "cos(e_theta)", "sin(theta_d)", "cos(theta_d)",
              "e_theta^2", "theta_d^2", "e_theta*theta_d",
              "e_theta_dot*theta_dot_d"};
    case DictionaryKind::Trig: {
      std::vector<std::string> n = {"e_theta", "theta_d", "e_theta_dot", "theta_dot_d"};
      for (double w : trig_scales) {
        std::ostringstream ws;
        ws << w;
        for (const char* a : {"theta", "vs*theta_dot", "theta_d"}) {
          n.push_back("sin(" + ws.str() + "*" + a + ")");
          n.push_back("cos(" + ws.str() + "*" + a + ")");
        }
      }
      return n;
    }
  }
  return {};
}

std::string ObservableDictionary::describe() const {
  std::ostringstream os;
  os << name() << " L=" << embedding;
  if (kind == DictionaryKind::Trig) {
    os << " scales=[";
    for (std::size_t i = 0; i < trig_scales.size(); ++i)
      os << (i ? "," : "") << trig_scales[i];
    os << "] vs=" << trig_velocity_scale;
  }
  return os.str();
}

void LiftHistory::prefill(const Eigen::Vector3d& z, double theta_dot_d, double u) {
  Eigen::VectorXd f = dict_.lift_sample(z, theta_dot_d);
  while (feats_.size() + 1 < static_cast<std::size_t>(dict_.embedding)) {
    feats_.push_back(f);
    inputs_.push_back(u);
  }
}

void LiftHistory::push(const Eigen::Vector3d& z, double theta_dot_d, double u) {
  feats_.push_front(dict_.lift_sample(z, theta_dot_d));
  inputs_.push_front(u);
  while (feats_.size() + 1 > static_cast<std::size_t>(dict_.embedding)) {
    feats_.pop_back();
    inputs_.pop_back();
  }
}

void LiftHistory::clear() {
  feats_.clear();
  inputs_.clear();
}

Eigen::VectorXd lift(const Eigen::Vector3d& z, double theta_dot_d, double u,
                     const LiftHistory& history,
                     const ObservableDictionary& dict) {
  const int L = dict.embedding, nphi = dict.sample_dim();
  if (history.size() + 1 < static_cast<std::size_t>(L))
    throw data_error("lift needs " + std::to_string(L - 1) +
                     " past samples; prefill the history (warm-up)");
  Eigen::VectorXd psi(dict.lifted_dim());
  dict.lift_sample(z, theta_dot_d, psi.data());
  psi[dict.state_dim()] = u;
  for (int j = 1; j < L; ++j) {
    psi.segment(j * nphi, nphi) = history.feats_[j - 1];
    psi[dict.state_dim() + j] = history.inputs_[j - 1];
  }
  return psi;
}

LiftedEpisode lift_episode(const Episode& ep, const TrajectoryDataset& ds,
                           const ObservableDictionary& dict) {
  const int n = static_cast<int>(ep.size());
  const int L = dict.embedding, nphi = dict.sample_dim();
  Eigen::MatrixXd phi(nphi, n);
  LiftedEpisode out;
  out.Z.resize(3, n);
  for (int k = 0; k < n; ++k) {
    ReferenceSample r = ds.reference_at_time(ep.t[k]);
    Eigen::Vector3d z = augment_state(ep.state(k), r);
    out.Z.col(k) = z;
    dict.lift_sample(z, r.theta_dot_d, phi.col(k).data());
  }
  out.X.resize(dict.state_dim(), n);
  out.U.resize(dict.input_dim(), n);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < L; ++j) {
      int src = std::max(k - j, 0);
      out.X.block(j * nphi, k, nphi, 1) = phi.col(src);
      out.U(j, k) = ep.u[src];
    }
  }
  return out;
}

SnapshotMatrices build_snapshots(const TrajectoryDataset& ds,
                                 const ObservableDictionary& dict, int phase,
                                 Execution exec) {
  const int ne = static_cast<int>(ds.episodes.size());
  std::vector<LiftedEpisode> lifted(ne);
  std::vector<std::vector<int>> starts(ne);
  auto work = [&](int e) {
    const Episode& ep = ds.episodes[e];
    for (std::size_t k = 0; k + 1 < ep.size(); ++k)
      if (ep.sigma[k] == phase && ep.sigma[k + 1] == phase)
        starts[e].push_back(static_cast<int>(k));
    if (!starts[e].empty()) lifted[e] = lift_episode(ep, ds, dict);
  };
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int e = 0; e < ne; ++e) work(e);
  } else {
    for (int e = 0; e < ne; ++e) work(e);
  }
  long m = 0;
  for (const auto& s : starts) m += static_cast<long>(s.size());
  SnapshotMatrices snap;
  snap.phase = phase;
  if (m == 0)
    throw data_error(std::string("no data for phase ") +
                     (phase == 0 ? "stance (plantarflexion)" : "swing (dorsiflexion)"));
  const int nx = dict.state_dim(), P = dict.lifted_dim();
  snap.Dk.resize(P, m);
  snap.Dk1.resize(P, m);
  snap.origin.reserve(m);
  long c = 0;
  for (int e = 0; e < ne; ++e) {
    for (int k : starts[e]) {
      snap.Dk.col(c).head(nx) = lifted[e].X.col(k);
      snap.Dk.col(c).tail(P - nx) = lifted[e].U.col(k);
      snap.Dk1.col(c).head(nx) = lifted[e].X.col(k + 1);
      snap.Dk1.col(c).tail(P - nx) = lifted[e].U.col(k + 1);
      snap.origin.emplace_back(e, k);
      ++c;
    }
  }
  return snap;
}

EdmdFit fit_edmd(const SnapshotMatrices& snap, const FitOptions& opt,
                 int state_rows) {
  if (opt.ridge < 0) throw config_error("ridge must be >= 0");
  if (snap.M() == 0) throw data_error("no snapshot pairs to fit");
  const Eigen::Index P = snap.Dk.rows();
  GramPair g = opt.exec == Execution::Parallel ? gram_parallel(snap.Dk, snap.Dk1)
                                               : gram_serial(snap.Dk, snap.Dk1);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(P);
  if (opt.scale) {
    for (Eigen::Index i = 0; i < P; ++i) {
      double d = std::sqrt(g.G(i, i));
      s[i] = d > 0 ? d : 1.0;
    }
  }
  Eigen::MatrixXd Gs = s.cwiseInverse().asDiagonal() * g.G * s.cwiseInverse().asDiagonal();
  Gs.diagonal().array() += opt.ridge;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gs);
  if (es.info() != Eigen::Success) throw numerics_error("eigendecomposition of G failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double emax = std::max(ev.maxCoeff(), 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(P);
  int rank = 0;
  double emin_kept = emax;
  for (Eigen::Index i = 0; i < P; ++i) {
    if (ev[i] > opt.cutoff * emax && ev[i] > 0) {
      inv[i] = 1.0 / ev[i];
      ++rank;
      emin_kept = std::min(emin_kept, ev[i]);
    }
  }
  Eigen::MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  EdmdFit fit;
  fit.K = g.F * s.cwiseInverse().asDiagonal() * pinv * s.cwiseInverse().asDiagonal();
  if (!fit.K.allFinite()) throw numerics_error("EDMD produced non-finite operator entries");
  fit.diag.samples = snap.M();
  fit.diag.rank = rank;
  fit.diag.rank_deficient = rank < P;
  double emin = ev.minCoeff();
  fit.diag.cond_G = emin > 0 ? emax / emin : INFINITY;
  (void)emin_kept;
  const int rows = state_rows < 0 ? static_cast<int>(P) : state_rows;
  fit.diag.residual =
      relative_residual(snap.Dk1.topRows(rows), fit.K.topRows(rows), snap.Dk);
  return fit;
}

void partition_operator(const Eigen::MatrixXd& K, const ObservableDictionary& dict,
                        Eigen::MatrixXd& Kxx, Eigen::MatrixXd& Kxu) {
  const int nx = dict.state_dim(), nu = dict.input_dim();
  if (K.rows() != nx + nu || K.cols() != nx + nu)
    throw data_error("operator size does not match the dictionary");
  Kxx = K.topLeftCorner(nx, nx);
  Kxu = K.topRightCorner(nx, nu);
}

void KoopmanModel::validate() const {
  const int n = nx(), m = nu();
  for (int p = 0; p < 2; ++p) {
    if (phase[p].Kxx.rows() != n || phase[p].Kxx.cols() != n ||
        phase[p].Kxu.rows() != n || phase[p].Kxu.cols() != m)
      throw data_error("model operator dimensions disagree with the dictionary");
    if (!phase[p].Kxx.allFinite() || !phase[p].Kxu.allFinite())
      throw data_error("model operator contains non-finite entries");
  }
  if (C.rows() != 3 || C.cols() != n || !C.allFinite())
    throw data_error("model recovery map has the wrong shape or non-finite entries");
}

Eigen::MatrixXd fit_projection(const TrajectoryDataset& ds,
                               const ObservableDictionary& dict, double* rmse) {
  const int nphi = dict.sample_dim();
  const std::size_t n = ds.total_samples();
  if (n < static_cast<std::size_t>(nphi))
    throw data_error("too few samples to fit the recovery map");
  Eigen::MatrixXd A(n, nphi);
  Eigen::MatrixXd Zt(n, 3);
  std::size_t row = 0;
  for (const Episode& ep : ds.episodes) {
    for (std::size_t k = 0; k < ep.size(); ++k, ++row) {
      ReferenceSample r = ds.reference_at_time(ep.t[k]);
      Eigen::Vector3d z = augment_state(ep.state(k), r);
      Eigen::VectorXd f = dict.lift_sample(z, r.theta_dot_d);
      A.row(row) = f.transpose();
      Zt.row(row) = z.transpose();
    }
  }
  Eigen::VectorXd s(nphi);
  for (int j = 0; j < nphi; ++j) {
    double c = A.col(j).norm();
    s[j] = c > 0 ? c : 1.0;
  }
  Eigen::MatrixXd As = A * s.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(As);
  qr.setThreshold(1e-13);
  Eigen::MatrixXd X = qr.solve(Zt);  // nphi x 3
  X = s.cwiseInverse().asDiagonal() * X;
  if (!X.allFinite()) throw numerics_error("recovery-map least squares failed");
  if (rmse) *rmse = std::sqrt((A * X - Zt).squaredNorm() / (3.0 * n));
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(3, dict.state_dim());
  C.leftCols(nphi) = X.transpose();
  return C;
}

KoopmanModel train_model(const TrajectoryDataset& train,
                         const ObservableDictionary& dict, const FitOptions& opt) {
  dict.validate();
  KoopmanModel m;
  m.dict = dict;
  m.options = opt;
  for (int p = 0; p < 2; ++p) {
    SnapshotMatrices snap = build_snapshots(train, dict, p, opt.exec);
    EdmdFit fit = fit_edmd(snap, opt, dict.state_dim());
    partition_operator(fit.K, dict, m.phase[p].Kxx, m.phase[p].Kxu);
    m.phase[p].diag = fit.diag;
  }
  m.C = fit_projection(train, dict, &m.projection_rmse);
  m.validate();
  return m;
}

Prediction predict_step(const KoopmanModel& m, const Eigen::VectorXd& psi,
                        const Eigen::VectorXd& u_lift, int sigma) {
  const PhaseOperator& op = m.phase[sigma == 0 ? 0 : 1];
  Prediction p;
  p.psi = op.Kxx * psi + op.Kxu * u_lift;
  p.z = m.C * p.psi;
  return p;
}

Eigen::MatrixXd rollout_predict(const KoopmanModel& m, const Eigen::VectorXd& psi0,
                                const std::vector<double>& u_past,
                                const std::vector<double>& u_future,
                                const std::vector<int>& sigma, int H) {
  if (H < 1) throw config_error("rollout horizon must be >= 1");
  const int L = m.nu();
  if (static_cast<int>(u_future.size()) < H || static_cast<int>(sigma.size()) < H)
    throw config_error("rollout needs H inputs and H phase labels");
  if (static_cast<int>(u_past.size()) < L - 1)
    throw data_error("rollout needs L - 1 past inputs");
  Eigen::MatrixXd out(3, H);
  Eigen::VectorXd psi = psi0, ul(L);
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < L; ++i) ul[i] = j - i >= 0 ? u_future[j - i] : u_past[i - j - 1];
    Prediction p = predict_step(m, psi, ul, sigma[j]);
    psi = std::move(p.psi);
    out.col(j) = p.z;
  }
  return out;
}

void projected_matrices(const KoopmanModel& m, int sigma, Eigen::Matrix3d& A,
                        Eigen::MatrixXd& B) {
  const PhaseOperator& op = m.phase[sigma == 0 ? 0 : 1];
  Eigen::MatrixXd Cpinv = m.C.completeOrthogonalDecomposition().pseudoInverse();
  A = m.C * op.Kxx * Cpinv;
  B = m.C * op.Kxu;
}

const PhaseMetric& PredictionReport::get(const std::string& phase) const {
  for (const auto& r : rows)
    if (r.phase == phase) return r;
  throw data_error("report has no phase '" + phase + "'");
}

PredictionReport evaluate_prediction(const KoopmanModel& m,
                                     const TrajectoryDataset& test, int horizon,
                                     int stride) {
  if (horizon < 1 || stride < 1) throw config_error("horizon and stride must be >= 1");
  m.validate();
  const int ne = static_cast<int>(test.episodes.size());
  const Eigen::RowVectorXd crow = m.angle_row();
  // Per episode: squared errors by phase and per-window RMSE by phase.
  struct Acc {
    double se[3] = {0, 0, 0};
    long n[3] = {0, 0, 0};
    std::vector<double> win[3];
  };
  std::vector<Acc> acc(ne);
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < ne; ++e) {
    const Episode& ep = test.episodes[e];
    LiftedEpisode le = lift_episode(ep, test, m.dict);
    const int n = static_cast<int>(ep.size());
    for (int k = 0; k + horizon <= n - 1; k += stride) {
      Eigen::VectorXd psi = le.X.col(k);
      double wse[3] = {0, 0, 0};
      long wn[3] = {0, 0, 0};
      for (int j = 0; j < horizon; ++j) {
        const PhaseOperator& op = m.phase[ep.sigma[k + j]];
        psi = op.Kxx * psi + op.Kxu * le.U.col(k + j);
        const double err = crow.dot(psi) - ep.theta[k + j + 1];
        const int ph = ep.sigma[k + j + 1];
        wse[ph] += err * err;
        wn[ph] += 1;
        wse[2] += err * err;
        wn[2] += 1;
      }
      for (int p = 0; p < 3; ++p) {
        acc[e].se[p] += wse[p];
        acc[e].n[p] += wn[p];
        if (wn[p] > 0) acc[e].win[p].push_back(std::sqrt(wse[p] / wn[p]));
      }
    }
  }
  PredictionReport rep;
  rep.horizon = horizon;
  const char* names[3] = {"PF", "DF", "all"};
  for (int p = 0; p < 3; ++p) {
    double se = 0;
    long n = 0;
    std::vector<double> w;
    for (const Acc& a : acc) {
      se += a.se[p];
      n += a.n[p];
      w.insert(w.end(), a.win[p].begin(), a.win[p].end());
    }
    PhaseMetric pm;
    pm.phase = names[p];
    pm.count = n;
    pm.rmse = n > 0 ? std::sqrt(se / n) : 0.0;
    if (w.size() > 1) {
      double mean = 0;
      for (double x : w) mean += x;
      mean /= w.size();
      double var = 0;
      for (double x : w) var += (x - mean) * (x - mean);
      pm.sd = std::sqrt(var / (w.size() - 1));
    }
    rep.rows.push_back(pm);
  }
  return rep;
}

}  // namespace kmpc
