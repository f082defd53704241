#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kmpc/koopman.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {

// Everything one pipeline run needs. Plant and controller settings live in
// their own files, referenced relative to the experiment file.
struct ExperimentConfig {
  std::string path;
  std::string plant_path;
  std::string mpc_path;
  std::string plant_text;       // canonical form, for hashing
  std::string experiment_text;  // canonical form of the hashed sections

  PlantParams plant;
  GaitPhaseSchedule schedule;
  ReferenceParams reference;
  ProtocolConfig protocol;
  MpcConfig mpc;

  std::string dictionary = "custom";
  int embedding = 1;
  FitOptions fit;

  std::vector<std::string> eval_dictionaries{"state", "custom", "trig"};
  std::vector<int> eval_embeddings{1, 8, 50};
  std::vector<int> eval_horizons{199};
  int eval_stride = 1;

  std::vector<double> run_periods{4.0, 3.0, 2.0};  // s per gait cycle
  std::vector<double> run_speeds{0.1, 0.2, 0.3};   // m/s, labels only
  int trials = 4;
  double run_duration = 60.0;      // s
  double initial_offset_max = 2.0; // deg
  bool record_solve_time = true;

  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int jobs = 0;  // 0 keeps the OpenMP default

  static ExperimentConfig load(const std::string& path);
  void validate() const;
  // Hash of every setting that influences the trained model.
  std::string training_hash() const;
};

struct CommandOptions {
  std::optional<int> cycles;
  std::string data;   // dataset CSV (default <out>/dataset.csv)
  std::string model;  // model JSON (default <out>/model.json)
  std::optional<std::string> dictionary;
  std::optional<int> embedding;
  std::vector<std::string> dictionaries;
  std::vector<int> embeddings;
  std::vector<int> horizons;
  std::optional<int> trials;
  std::vector<double> periods;
  std::optional<double> duration;
  std::string run_dir;  // default <out>/runs
};

std::string default_dataset_path(const ExperimentConfig& cfg);
std::string default_model_path(const ExperimentConfig& cfg);
std::string default_run_dir(const ExperimentConfig& cfg);

void cmd_generate_data(const ExperimentConfig& cfg, const CommandOptions& opt,
                       std::ostream& out);
void cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt,
               std::ostream& out);
void cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt,
                  std::ostream& out);
void cmd_run_mpc(const ExperimentConfig& cfg, const CommandOptions& opt,
                 std::ostream& out);
void cmd_report(const ExperimentConfig& cfg, const CommandOptions& opt,
                std::ostream& out);

// Per-trial initial state: reference start plus a seeded angle offset.
AnkleState trial_initial_state(const ExperimentConfig& cfg,
                               const GaitPhaseSchedule& schedule,
                               std::size_t period_index, int trial);

// Tracking summary recomputed from a run log.
struct LogSummary {
  std::string file;
  double period = 0.0;
  int trial = 0;
  long samples = 0;
  double rmse = 0.0, rmse_pf = 0.0, rmse_df = 0.0;
  long input_violations = 0, state_violations = 0, unconverged = 0;
  std::vector<double> solve_ms;
};

LogSummary summarize_run_log(const std::string& path, const MpcConfig& mpc);

std::string run_log_name(double period, int trial);

}  // namespace kmpc
