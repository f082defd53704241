// Command-line front end for the Koopman MPC pipeline.

#include <CLI11.hpp>

#include <iostream>

#include "kmpc/error.hpp"
#include "kmpc/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Koopman-model predictive control of a simulated FES ankle"};
  app.require_subcommand(1);

  std::string config_path = "configs/experiment.toml";
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = -1;
  app.add_option("--config", config_path, "experiment config file")->capture_default_str();
  app.add_option("--seed", seed, "root seed (overrides the config)");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--jobs", jobs, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);

  kmpc::CommandOptions opt;
  std::optional<int> cycles, embedding, trials;
  std::optional<std::string> dictionary;
  std::optional<double> duration;

  auto* gen = app.add_subcommand("generate-data", "simulate the training dataset");
  gen->add_option("--cycles", cycles, "number of gait cycles")->check(CLI::PositiveNumber);
  gen->add_option("--data", opt.data, "dataset CSV path");

  auto* train = app.add_subcommand("train", "fit the phase-indexed Koopman model");
  train->add_option("--data", opt.data, "dataset CSV path");
  train->add_option("--model", opt.model, "model JSON path");
  train->add_option("--dictionary", dictionary, "state, custom or trig");
  train->add_option("--embedding", embedding, "embedding length L")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "prediction accuracy sweeps on held-out data");
  eval->add_option("--data", opt.data, "dataset CSV path");
  eval->add_option("--model", opt.model, "model JSON path");
  eval->add_option("--dictionary", dictionary, "expected model dictionary");
  eval->add_option("--embedding", embedding, "expected model embedding length");
  eval->add_option("--dictionaries", opt.dictionaries, "dictionary sweep")->delimiter(',');
  eval->add_option("--embeddings", opt.embeddings, "embedding sweep")->delimiter(',');
  eval->add_option("--horizons", opt.horizons, "prediction horizons in steps")->delimiter(',');

  auto* run = app.add_subcommand("run-mpc", "closed-loop runs over the speed matrix");
  run->add_option("--model", opt.model, "model JSON path");
  run->add_option("--trials", trials, "trials per speed")->check(CLI::PositiveNumber);
  run->add_option("--periods", opt.periods, "gait cycle periods in s")->delimiter(',');
  run->add_option("--duration", duration, "run length in s")->check(CLI::PositiveNumber);
  run->add_option("--runs", opt.run_dir, "run log directory");

  auto* report = app.add_subcommand("report", "aggregate run logs into tables");
  report->add_option("--runs", opt.run_dir, "run log directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kmpc::exit_code(kmpc::ErrorKind::Config);
  }

  opt.cycles = cycles;
  opt.embedding = embedding;
  opt.trials = trials;
  opt.dictionary = dictionary;
  opt.duration = duration;

  try {
    kmpc::ExperimentConfig cfg = kmpc::ExperimentConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (jobs >= 0) cfg.jobs = jobs;

    if (gen->parsed()) kmpc::cmd_generate_data(cfg, opt, std::cout);
    else if (train->parsed()) kmpc::cmd_train(cfg, opt, std::cout);
    else if (eval->parsed()) kmpc::cmd_evaluate(cfg, opt, std::cout);
    else if (run->parsed()) kmpc::cmd_run_mpc(cfg, opt, std::cout);
    else if (report->parsed()) kmpc::cmd_report(cfg, opt, std::cout);
  } catch (const kmpc::Error& e) {
    std::cerr << "kmpc: " << kmpc::kind_name(e.kind()) << " error: " << e.what() << "\n";
    return kmpc::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "kmpc: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
