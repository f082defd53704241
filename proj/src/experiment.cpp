#include "kmpc/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kmpc/error.hpp"

namespace fs = std::filesystem;

namespace kmpc {

namespace {

constexpr std::uint64_t kTrialStream = 0x7472696100000000ull;

std::string resolve(const std::string& base_file, const std::string& p) {
  fs::path q(p);
  if (q.is_absolute()) return q.string();
  return (fs::path(base_file).parent_path() / q).lexically_normal().string();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw io_error("failed writing " + path);
}

// Only the keys that shape the model enter the training hash.
std::string filtered_canonical(const ConfigFile& cf) {
  std::string out;
  std::istringstream in(cf.canonical());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("protocol.", 0) == 0 || line.rfind("model.", 0) == 0 ||
        line.rfind("experiment.seed ", 0) == 0)
      out += line + "\n";
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string eval_label(const std::string& dict, int L) {
  return dict + "_L" + std::to_string(L);
}

void set_jobs(const ExperimentConfig& cfg) {
  if (cfg.jobs > 0) omp_set_num_threads(cfg.jobs);
}

TrajectoryDataset load_split(const ExperimentConfig& cfg, const std::string& path,
                             TrajectoryDataset* train) {
  TrajectoryDataset all = read_dataset(path);
  TrajectoryDataset tr, te;
  split_dataset(all, cfg.protocol.train_fraction, tr, te);
  if (train) *train = std::move(tr);
  return te;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  ConfigFile ex = ConfigFile::load(path);
  ExperimentConfig c;
  c.path = path;
  if (!ex.has("experiment.seed"))
    throw config_error(path + ": experiment.seed is required");
  c.seed = static_cast<std::uint64_t>(ex.get_int("experiment.seed", 0));
  c.plant_path = resolve(path, ex.get_string("experiment.plant_config", "plant.toml"));
  c.mpc_path = resolve(path, ex.get_string("experiment.mpc_config", "mpc.toml"));
  c.out_dir = ex.get_string("experiment.out_dir", c.out_dir);
  c.jobs = static_cast<int>(ex.get_int("experiment.jobs", c.jobs));

  ConfigFile pl = ConfigFile::load(c.plant_path);
  c.plant = PlantParams::from_config(pl);
  c.schedule = GaitPhaseSchedule::from_config(pl);
  c.reference = ReferenceParams::from_config(pl);
  c.plant_text = pl.canonical();
  c.mpc = MpcConfig::from_config(ConfigFile::load(c.mpc_path));

  c.protocol = ProtocolConfig::from_config(ex);
  c.dictionary = ex.get_string("model.dictionary", c.dictionary);
  c.embedding = static_cast<int>(ex.get_int("model.embedding", c.embedding));
  c.fit.ridge = ex.get_double("model.ridge", c.fit.ridge);
  c.fit.cutoff = ex.get_double("model.cutoff", c.fit.cutoff);
  c.fit.scale = ex.get_bool("model.scale_columns", c.fit.scale);
  c.experiment_text = filtered_canonical(ex);

  c.eval_dictionaries = ex.get_strings("evaluate.dictionaries", c.eval_dictionaries);
  std::vector<double> tmp;
  for (double v : ex.get_doubles("evaluate.embeddings", {1, 8, 50})) tmp.push_back(v);
  c.eval_embeddings.clear();
  for (double v : tmp) c.eval_embeddings.push_back(static_cast<int>(v));
  c.eval_horizons.clear();
  for (double v : ex.get_doubles("evaluate.horizons_steps",
                                 {static_cast<double>(c.protocol.samples_per_cycle - 1)}))
    c.eval_horizons.push_back(static_cast<int>(v));
  c.eval_stride = static_cast<int>(ex.get_int("evaluate.stride_steps", c.eval_stride));

  c.run_periods = ex.get_doubles("runs.cycle_periods_s", c.run_periods);
  c.run_speeds = ex.get_doubles("runs.speeds_m_s", c.run_speeds);
  c.trials = static_cast<int>(ex.get_int("runs.trials", c.trials));
  c.run_duration = ex.get_double("runs.duration_s", c.run_duration);
  c.initial_offset_max = ex.get_double("runs.initial_offset_max_deg", c.initial_offset_max);
  c.record_solve_time = ex.get_bool("runs.record_solve_time", c.record_solve_time);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (embedding < 1) throw config_error("model.embedding must be >= 1");
  ObservableDictionary::make(dictionary, embedding);
  for (const auto& d : eval_dictionaries) ObservableDictionary::make(d, 1);
  for (int L : eval_embeddings)
    if (L < 1) throw config_error("evaluate.embeddings must be >= 1");
  for (int h : eval_horizons)
    if (h < 1) throw config_error("evaluate.horizons_steps must be >= 1");
  if (eval_stride < 1) throw config_error("evaluate.stride_steps must be >= 1");
  if (run_periods.empty()) throw config_error("runs.cycle_periods_s must not be empty");
  for (double p : run_periods)
    if (!(p > 0)) throw config_error("runs.cycle_periods_s must be > 0");
  if (!run_speeds.empty() && run_speeds.size() != run_periods.size())
    throw config_error("runs.speeds_m_s must match runs.cycle_periods_s in length");
  if (trials < 1) throw config_error("runs.trials must be >= 1");
  if (!(run_duration > 0)) throw config_error("runs.duration_s must be > 0");
  if (!(initial_offset_max >= 0)) throw config_error("runs.initial_offset_max_deg must be >= 0");
  if (jobs < 0) throw config_error("experiment.jobs must be >= 0");
  if (std::abs(mpc.sample_period * protocol.sample_rate_hz - 1.0) > 1e-9)
    throw config_error("mpc.sample_period_s must equal 1 / protocol.sample_rate_hz");
}

std::string ExperimentConfig::training_hash() const {
  std::string text = plant_text + experiment_text;
  text += "seed = " + std::to_string(seed) + "\n";
  text += "dictionary = " + dictionary + "\nembedding = " + std::to_string(embedding) + "\n";
  text += "cycles = " + std::to_string(protocol.cycles) + "\n";
  return fnv1a_hex(text);
}

std::string default_dataset_path(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "dataset.csv").string();
}
std::string default_model_path(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "model.json").string();
}
std::string default_run_dir(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "runs").string();
}

void cmd_generate_data(const ExperimentConfig& cfg_in, const CommandOptions& opt,
                       std::ostream& out) {
  ExperimentConfig cfg = cfg_in;
  if (opt.cycles) cfg.protocol.cycles = *opt.cycles;
  cfg.protocol.validate();
  set_jobs(cfg);
  TrajectoryDataset ds = generate_training_dataset(cfg.plant, cfg.schedule, cfg.reference,
                                                   cfg.protocol, cfg.seed);
  std::string path = opt.data.empty() ? default_dataset_path(cfg) : opt.data;
  if (fs::path(path).has_parent_path()) ensure_dir(fs::path(path).parent_path().string());
  write_dataset(ds, path);
  out << "wrote " << path << " (" << ds.total_samples() << " samples, "
      << ds.episodes.size() << " cycles)\n";
}

void cmd_train(const ExperimentConfig& cfg_in, const CommandOptions& opt,
               std::ostream& out) {
  ExperimentConfig cfg = cfg_in;
  if (opt.dictionary) cfg.dictionary = *opt.dictionary;
  if (opt.embedding) cfg.embedding = *opt.embedding;
  if (opt.cycles) cfg.protocol.cycles = *opt.cycles;
  cfg.validate();
  set_jobs(cfg);
  std::string data = opt.data.empty() ? default_dataset_path(cfg) : opt.data;
  TrajectoryDataset train;
  TrajectoryDataset test = load_split(cfg, data, &train);
  ObservableDictionary dict = ObservableDictionary::make(cfg.dictionary, cfg.embedding);
  KoopmanModel m = train_model(train, dict, cfg.fit);
  m.config_hash = cfg.training_hash();
  std::string path = opt.model.empty() ? default_model_path(cfg) : opt.model;
  if (fs::path(path).has_parent_path()) ensure_dir(fs::path(path).parent_path().string());
  write_model(m, path);

  const char* names[2] = {"stance", "swing"};
  for (int s = 0; s < 2; ++s) {
    const FitDiagnostics& d = m.phase[s].diag;
    out << names[s] << ": samples " << d.samples << ", residual "
        << fmt("%.3e", d.residual) << ", cond(G) " << fmt("%.3e", d.cond_G)
        << ", rank " << d.rank << (d.rank_deficient ? " (rank deficient)" : "") << "\n";
  }
  out << "recovery map rmse " << fmt("%.3e", m.projection_rmse) << "\n";
  if (!test.episodes.empty()) {
    PredictionReport r = evaluate_prediction(m, test, 1, 1);
    out << "held-out one-step angle rmse " << fmt("%.4f", r.get("all").rmse)
        << " deg (PF " << fmt("%.4f", r.get("PF").rmse) << ", DF "
        << fmt("%.4f", r.get("DF").rmse) << ")\n";
  }
  out << "wrote " << path << " (hash " << m.config_hash << ")\n";
}

void cmd_evaluate(const ExperimentConfig& cfg_in, const CommandOptions& opt,
                  std::ostream& out) {
  ExperimentConfig cfg = cfg_in;
  set_jobs(cfg);
  if (!opt.dictionaries.empty()) cfg.eval_dictionaries = opt.dictionaries;
  if (!opt.embeddings.empty()) cfg.eval_embeddings = opt.embeddings;
  if (!opt.horizons.empty()) cfg.eval_horizons = opt.horizons;
  cfg.validate();

  std::string data = opt.data.empty() ? default_dataset_path(cfg) : opt.data;
  std::string model_path = opt.model.empty() ? default_model_path(cfg) : opt.model;
  TrajectoryDataset train;
  TrajectoryDataset test = load_split(cfg, data, &train);
  if (test.episodes.empty()) throw data_error("no held-out episodes in " + data);
  KoopmanModel model = read_model(model_path);
  if (opt.dictionary && *opt.dictionary != model.dict.name())
    throw data_error("model " + model_path + " uses dictionary '" + model.dict.name() +
                     "', not '" + *opt.dictionary + "'");
  if (opt.embedding && *opt.embedding != model.dict.embedding)
    throw data_error("model " + model_path + " has embedding " +
                     std::to_string(model.dict.embedding) + ", not " +
                     std::to_string(*opt.embedding));

  // Rows: the stored model first, then the dictionary and embedding sweeps
  // trained on the same split.
  std::vector<std::pair<std::string, KoopmanModel>> models;
  std::set<std::string> seen;
  models.emplace_back(eval_label(model.dict.name(), model.dict.embedding), model);
  seen.insert(models.back().first);
  auto add = [&](const std::string& d, int L) {
    std::string label = eval_label(d, L);
    if (seen.count(label)) return;
    seen.insert(label);
    models.emplace_back(label, train_model(train, ObservableDictionary::make(d, L), cfg.fit));
  };
  for (const auto& d : cfg.eval_dictionaries) add(d, 1);
  for (int L : cfg.eval_embeddings) add(model.dict.name(), L);

  std::string csv = "dictionary,phase,horizon,rmse_deg,sd_deg\n";
  char buf[256];
  for (const auto& [label, m] : models) {
    for (int h : cfg.eval_horizons) {
      PredictionReport r = evaluate_prediction(m, test, h, cfg.eval_stride);
      for (const PhaseMetric& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%.17g,%.17g\n", label.c_str(),
                      row.phase.c_str(), h, row.rmse, row.sd);
        csv += buf;
        out << label << " " << row.phase << " H=" << h << " rmse "
            << fmt("%.4f", row.rmse) << " deg, sd " << fmt("%.4f", row.sd) << "\n";
      }
    }
  }
  ensure_dir(cfg.out_dir);
  std::string path = (fs::path(cfg.out_dir) / "evaluation.csv").string();
  write_text(path, csv);
  out << "wrote " << path << "\n";
}

AnkleState trial_initial_state(const ExperimentConfig& cfg,
                               const GaitPhaseSchedule& schedule,
                               std::size_t period_index, int trial) {
  Rng rng(cfg.seed, kTrialStream + period_index * 1024 + static_cast<std::uint64_t>(trial));
  double offset = rng.uniform(-cfg.initial_offset_max, cfg.initial_offset_max);
  ReferenceSample r = reference_at(schedule.t_start, schedule, cfg.reference);
  return {r.theta_d + offset, r.theta_dot_d, schedule.t_start, 0.0};
}

std::string run_log_name(double period, int trial) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "run_p%.3f_t%02d.csv", period, trial);
  return buf;
}

void cmd_run_mpc(const ExperimentConfig& cfg_in, const CommandOptions& opt,
                 std::ostream& out) {
  ExperimentConfig cfg = cfg_in;
  if (opt.trials) cfg.trials = *opt.trials;
  if (!opt.periods.empty()) {
    cfg.run_periods = opt.periods;
    cfg.run_speeds.clear();
  }
  if (opt.duration) cfg.run_duration = *opt.duration;
  cfg.validate();
  set_jobs(cfg);

  std::string model_path = opt.model.empty() ? default_model_path(cfg) : opt.model;
  KoopmanModel model = read_model(model_path);
  if (!cfg.mpc.dictionary.empty() && cfg.mpc.dictionary != model.dict.name())
    throw config_error("controller config expects dictionary '" + cfg.mpc.dictionary +
                       "' but " + model_path + " uses '" + model.dict.name() + "'");
  std::string dir = opt.run_dir.empty() ? default_run_dir(cfg) : opt.run_dir;
  ensure_dir(dir);

  struct Job {
    std::size_t period_index;
    int trial;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cfg.run_periods.size(); ++i)
    for (int t = 1; t <= cfg.trials; ++t) jobs.push_back({i, t});
  std::vector<RunReport> reports(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<double> offsets(jobs.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (long j = 0; j < static_cast<long>(jobs.size()); ++j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    try {
      GaitPhaseSchedule sc = cfg.schedule.with_period(cfg.run_periods[job.period_index]);
      AnkleState init = trial_initial_state(cfg, sc, job.period_index, job.trial);
      ReferenceSample r0 = reference_at(sc.t_start, sc, cfg.reference);
      offsets[static_cast<std::size_t>(j)] = init.theta - r0.theta_d;
      RunReport rep = closed_loop_run(cfg.plant, model, cfg.mpc, sc, cfg.reference,
                                      cfg.run_duration, init);
      write_run_log(rep, (fs::path(dir) / run_log_name(cfg.run_periods[job.period_index],
                                                       job.trial)).string(),
                    cfg.record_solve_time);
      rep.log.clear();
      reports[static_cast<std::size_t>(j)] = std::move(rep);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(j)] = e.what();
    }
  }

  // Per-run table and the mean +- SD summary per speed.
  std::string runs = "log,period_s,trial,offset_deg,rmse_deg,rmse_pf_deg,rmse_df_deg,"
                     "cycle_rmse_mean_deg,cycle_rmse_sd_deg,input_violations,"
                     "state_violations,unconverged,max_switch_jump_deg,status\n";
  std::string summary = "period_s,speed_m_s,trials,rmse_mean_deg,rmse_sd_deg,"
                        "pf_mean_deg,pf_sd_deg,df_mean_deg,df_sd_deg,"
                        "input_violations,state_violations,unconverged\n";
  char buf[512];
  std::size_t failures = 0;
  std::string first_error;
  for (std::size_t i = 0; i < cfg.run_periods.size(); ++i) {
    std::vector<double> all, pf, df;
    long uv = 0, sv = 0, nc = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].period_index != i) continue;
      const RunReport& r = reports[j];
      std::string name = run_log_name(cfg.run_periods[i], jobs[j].trial);
      if (!errors[j].empty()) {
        ++failures;
        if (first_error.empty()) first_error = name + ": " + errors[j];
        std::snprintf(buf, sizeof buf, "%s,%.17g,%d,%.17g,,,,,,,,,,failed\n", name.c_str(),
                      cfg.run_periods[i], jobs[j].trial, offsets[j]);
        runs += buf;
        continue;
      }
      all.push_back(r.rmse);
      pf.push_back(r.rmse_pf);
      df.push_back(r.rmse_df);
      uv += r.input_violations;
      sv += r.state_violations;
      nc += r.unconverged;
      std::snprintf(buf, sizeof buf,
                    "%s,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%ld,%ld,%ld,%.17g,ok\n",
                    name.c_str(), cfg.run_periods[i], jobs[j].trial, offsets[j], r.rmse,
                    r.rmse_pf, r.rmse_df, r.cycle_rmse_mean, r.cycle_rmse_sd,
                    r.input_violations, r.state_violations, r.unconverged,
                    r.max_switch_jump);
      runs += buf;
    }
    double speed = cfg.run_speeds.empty() ? NAN : cfg.run_speeds[i];
    std::snprintf(buf, sizeof buf,
                  "%.17g,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%ld,%ld,%ld\n",
                  cfg.run_periods[i], speed, all.size(), mean_of(all), sd_of(all),
                  mean_of(pf), sd_of(pf), mean_of(df), sd_of(df), uv, sv, nc);
    summary += buf;
    out << "cycle " << fmt("%.1f", cfg.run_periods[i]) << " s: rmse "
        << fmt("%.3f", mean_of(all)) << " +- " << fmt("%.3f", sd_of(all)) << " deg (PF "
        << fmt("%.3f", mean_of(pf)) << " +- " << fmt("%.3f", sd_of(pf)) << ", DF "
        << fmt("%.3f", mean_of(df)) << " +- " << fmt("%.3f", sd_of(df)) << "), "
        << all.size() << " trials, violations u " << uv << " / state " << sv << "\n";
  }
  write_text((fs::path(dir) / "runs.csv").string(), runs);
  write_text((fs::path(dir) / "summary.csv").string(), summary);
  out << "wrote " << jobs.size() - failures << " run logs to " << dir << "\n";
  if (failures) throw numerics_error(std::to_string(failures) + " run(s) failed; first: " + first_error);
}

LogSummary summarize_run_log(const std::string& path, const MpcConfig& mpc) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) ||
      line != "t,theta,theta_d,theta_dot,theta_dot_d,u,sigma,cost,solve_ms,converged")
    throw data_error(path + ":1: unexpected run-log header");
  LogSummary s;
  s.file = fs::path(path).filename().string();
  double se[2] = {0, 0};
  long n[2] = {0, 0};
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    double v[10];
    int k = 0;
    std::size_t pos = 0;
    while (k < 10) {
      std::size_t end = line.find(',', pos);
      std::string cell = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      char* stop = nullptr;
      v[k] = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || *stop != '\0')
        throw data_error(path + ":" + std::to_string(lineno) + ": malformed field");
      ++k;
      if (end == std::string::npos) break;
      pos = end + 1;
    }
    if (k != 10) throw data_error(path + ":" + std::to_string(lineno) + ": expected 10 fields");
    const int sigma = v[6] == 0.0 ? 0 : 1;
    const double e = v[1] - v[2];
    se[sigma] += e * e;
    ++n[sigma];
    if (v[5] < mpc.u_min[sigma] - 1e-9 || v[5] > mpc.u_max[sigma] + 1e-9) ++s.input_violations;
    if (v[1] < mpc.theta_min || v[1] > mpc.theta_max || std::abs(v[3]) > mpc.velocity_max)
      ++s.state_violations;
    if (v[9] == 0.0) ++s.unconverged;
    s.solve_ms.push_back(v[8]);
  }
  s.samples = n[0] + n[1];
  if (s.samples == 0) throw data_error(path + ": run log has no samples");
  s.rmse_pf = n[0] ? std::sqrt(se[0] / n[0]) : 0.0;
  s.rmse_df = n[1] ? std::sqrt(se[1] / n[1]) : 0.0;
  s.rmse = std::sqrt((se[0] + se[1]) / s.samples);
  if (std::sscanf(s.file.c_str(), "run_p%lf_t%d.csv", &s.period, &s.trial) != 2)
    throw data_error(path + ": file name does not encode period and trial");
  return s;
}

void cmd_report(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  std::string dir = opt.run_dir.empty() ? default_run_dir(cfg) : opt.run_dir;
  std::vector<std::string> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("run_p", 0) == 0 && e.path().extension() == ".csv")
        files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw data_error("no runs found in " + dir);

  std::vector<LogSummary> logs;
  std::vector<std::string> bad;
  for (const auto& f : files) {
    try {
      logs.push_back(summarize_run_log(f, cfg.mpc));
    } catch (const Error& e) {
      bad.push_back(e.what());
    }
  }
  for (const auto& b : bad) out << "skipped: " << b << "\n";
  if (logs.empty()) throw data_error("no readable runs in " + dir);

  std::string rep_dir = (fs::path(cfg.out_dir) / "report").string();
  ensure_dir(rep_dir);
  char buf[1024];

  // Table II analogue.
  std::map<double, std::vector<const LogSummary*>, std::greater<double>> by_period;
  for (const auto& l : logs) by_period[l.period].push_back(&l);
  std::string tracking = "period_s,speed_m_s,trials,rmse_mean_deg,rmse_sd_deg,pf_mean_deg,"
                         "pf_sd_deg,df_mean_deg,df_sd_deg,input_violations,state_violations,logs\n";
  std::string text = "Closed-loop tracking (mean +- SD over trials, deg)\n";
  text += "  cycle_s  speed_m_s  trials  all              PF               DF\n";
  long total_uv = 0, total_sv = 0, total_nc = 0;
  for (const auto& [period, group] : by_period) {
    std::vector<double> all, pf, df;
    long uv = 0, sv = 0;
    std::string names;
    for (const LogSummary* l : group) {
      all.push_back(l->rmse);
      pf.push_back(l->rmse_pf);
      df.push_back(l->rmse_df);
      uv += l->input_violations;
      sv += l->state_violations;
      total_nc += l->unconverged;
      if (!names.empty()) names += ";";
      names += l->file;
    }
    total_uv += uv;
    total_sv += sv;
    double speed = NAN;
    for (std::size_t i = 0; i < cfg.run_periods.size() && i < cfg.run_speeds.size(); ++i)
      if (std::abs(cfg.run_periods[i] - period) < 1e-9) speed = cfg.run_speeds[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%ld,%ld,%s\n",
                  period, speed, group.size(), mean_of(all), sd_of(all), mean_of(pf), sd_of(pf),
                  mean_of(df), sd_of(df), uv, sv, names.c_str());
    tracking += buf;
    std::snprintf(buf, sizeof buf, "  %7.2f  %9.2f  %6zu  %6.3f +- %5.3f  %6.3f +- %5.3f  %6.3f +- %5.3f\n",
                  period, speed, group.size(), mean_of(all), sd_of(all), mean_of(pf), sd_of(pf),
                  mean_of(df), sd_of(df));
    text += buf;
  }
  write_text((fs::path(rep_dir) / "tracking.csv").string(), tracking);

  // Long format for plotting.
  std::string longf = "log,period_s,trial,phase,rmse_deg\n";
  for (const auto& l : logs) {
    const char* ph[3] = {"all", "PF", "DF"};
    double v[3] = {l.rmse, l.rmse_pf, l.rmse_df};
    for (int k = 0; k < 3; ++k) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%d,%s,%.17g\n", l.file.c_str(), l.period, l.trial,
                    ph[k], v[k]);
      longf += buf;
    }
  }
  write_text((fs::path(rep_dir) / "runs_long.csv").string(), longf);

  // Solve times.
  std::vector<double> times;
  for (const auto& l : logs) times.insert(times.end(), l.solve_ms.begin(), l.solve_ms.end());
  bool timed = std::any_of(times.begin(), times.end(), [](double t) { return t > 0; });
  std::string solve = "samples,median_ms,p95_ms,p99_ms,max_ms\n";
  if (timed) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g\n", times.size(),
                  percentile(times, 0.5), percentile(times, 0.95), percentile(times, 0.99),
                  *std::max_element(times.begin(), times.end()));
    solve += buf;
    std::snprintf(buf, sizeof buf, "\nSolve time over %zu steps: median %.4g ms, p95 %.4g ms, max %.4g ms\n",
                  times.size(), percentile(times, 0.5), percentile(times, 0.95),
                  *std::max_element(times.begin(), times.end()));
    text += buf;
  } else {
    text += "\nSolve time: not recorded in these logs\n";
  }
  write_text((fs::path(rep_dir) / "solve_time.csv").string(), solve);
  std::snprintf(buf, sizeof buf,
                "Constraint violations: input %ld, state %ld samples; unconverged solves %ld\n",
                total_uv, total_sv, total_nc);
  text += buf;

  // Dictionary and embedding tables from the evaluation file, if present.
  std::string eval_path = (fs::path(cfg.out_dir) / "evaluation.csv").string();
  std::ifstream ev(eval_path);
  if (ev) {
    std::string line, dict_csv = "dictionary,phase,horizon,rmse_deg,sd_deg\n",
                      emb_csv = "dictionary,embedding,phase,horizon,rmse_deg,sd_deg\n";
    std::getline(ev, line);
    text += "\nPrediction accuracy (" + eval_path + ")\n";
    while (std::getline(ev, line)) {
      if (line.empty()) continue;
      std::string label = line.substr(0, line.find(','));
      std::size_t us = label.rfind("_L");
      if (us == std::string::npos) continue;
      int L = std::atoi(label.c_str() + us + 2);
      std::string rest = line.substr(line.find(',') + 1);
      if (L == 1) dict_csv += label.substr(0, us) + "," + rest + "\n";
      emb_csv += label.substr(0, us) + "," + std::to_string(L) + "," + rest + "\n";
      text += "  " + line + "\n";
    }
    write_text((fs::path(rep_dir) / "dictionaries.csv").string(), dict_csv);
    write_text((fs::path(rep_dir) / "embeddings.csv").string(), emb_csv);
  } else {
    text += "\nPrediction accuracy: no evaluation.csv next to the runs\n";
  }
  text += "\nFatigue trials are not part of this report: the simulated plant has no fatigue model.\n";
  if (!bad.empty()) {
    text += "\nSkipped logs:\n";
    for (const auto& b : bad) text += "  " + b + "\n";
  }
  write_text((fs::path(rep_dir) / "report.txt").string(), text);
  out << text << "wrote " << rep_dir << "\n";
}

}  // namespace kmpc
