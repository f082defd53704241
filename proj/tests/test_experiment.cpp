#include "kmpc/experiment.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kmpc/error.hpp"

namespace kmpc {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Small pipeline: 20 cycles, short runs, one trial per speed.
class PipelineTest : public ::testing::Test {
 protected:
  static fs::path root() {
    static const fs::path r =
        fs::temp_directory_path() / ("kmpc_pipeline_" + std::to_string(::getpid()));
    return r;
  }

  static std::string write_config(const std::string& name, const std::string& extra) {
    fs::create_directories(root());
    fs::path p = root() / name;
    std::ofstream f(p);
    f << "[experiment]\nseed = 99\n"
      << "plant_config = \"" << KMPC_CONFIG_DIR << "/plant.toml\"\n"
      << "mpc_config = \"" << KMPC_CONFIG_DIR << "/mpc.toml\"\n"
      << "out_dir = \"" << (root() / "out").string() << "\"\n"
      << "[protocol]\ncycles = 20\n"
      << "[model]\ndictionary = \"custom\"\nembedding = 1\nridge = 1e-6\n"
      << "[evaluate]\ndictionaries = [\"state\", \"custom\"]\nembeddings = [1, 2]\n"
      << "horizons_steps = [20]\nstride_steps = 5\n"
      << "[runs]\ncycle_periods_s = [4.0, 2.0]\nspeeds_m_s = [0.1, 0.3]\ntrials = 1\n"
      << "duration_s = 2.0\nrecord_solve_time = false\n"
      << extra;
    return p.string();
  }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    ExperimentConfig cfg = ExperimentConfig::load(write_config("exp.toml", ""));
    std::ostringstream sink;
    CommandOptions opt;
    cmd_generate_data(cfg, opt, sink);
    cmd_train(cfg, opt, sink);
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }

  static std::string write_noseed() {
    fs::create_directories(root());
    fs::path p = root() / "noseed.toml";
    std::ofstream f(p);
    f << "[experiment]\nplant_config = \"" << KMPC_CONFIG_DIR << "/plant.toml\"\n";
    return p.string();
  }

  ExperimentConfig config() const {
    return ExperimentConfig::load((root() / "exp.toml").string());
  }
};

TEST_F(PipelineTest, LoadsLayeredConfig) {
  ExperimentConfig cfg = config();
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.protocol.cycles, 20);
  EXPECT_EQ(cfg.mpc.dictionary, "custom");
  EXPECT_EQ(cfg.run_periods, (std::vector<double>{4.0, 2.0}));
  EXPECT_FALSE(cfg.record_solve_time);
  EXPECT_EQ(cfg.training_hash().size(), 16u);
}

TEST_F(PipelineTest, TrainingHashTracksModelSettings) {
  ExperimentConfig a = config();
  ExperimentConfig b = ExperimentConfig::load(write_config("runs_only.toml", "initial_offset_max_deg = 1.0\n"));
  EXPECT_EQ(a.training_hash(), b.training_hash());
  ExperimentConfig c = a;
  c.seed = 100;
  EXPECT_NE(a.training_hash(), c.training_hash());
  ExperimentConfig d = a;
  d.embedding = 2;
  EXPECT_NE(a.training_hash(), d.training_hash());
}

TEST_F(PipelineTest, ConfigErrorsAreClassified) {
  try {
    ExperimentConfig::load(write_noseed());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  try {
    ExperimentConfig::load((root() / "absent.toml").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
  ExperimentConfig bad = config();
  bad.run_speeds = {0.1};
  EXPECT_THROW(bad.validate(), Error);
}

TEST_F(PipelineTest, EvaluateWritesSweepTable) {
  ExperimentConfig cfg = config();
  std::ostringstream sink;
  CommandOptions opt;
  cmd_evaluate(cfg, opt, sink);
  std::string csv = slurp(root() / "out" / "evaluation.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dictionary,phase,horizon,rmse_deg,sd_deg");
  for (const char* label : {"custom_L1,", "state_L1,", "custom_L2,"})
    EXPECT_NE(csv.find(label), std::string::npos) << label;

  CommandOptions wrong;
  wrong.dictionary = "trig";
  try {
    cmd_evaluate(cfg, wrong, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
  }
}

TEST_F(PipelineTest, RunsAreByteIdenticalAcrossReruns) {
  ExperimentConfig cfg = config();
  std::ostringstream sink;
  CommandOptions a;
  a.run_dir = (root() / "runs_a").string();
  cmd_run_mpc(cfg, a, sink);
  CommandOptions b = a;
  b.run_dir = (root() / "runs_b").string();
  cfg.jobs = 1;
  cmd_run_mpc(cfg, b, sink);
  for (const char* f : {"run_p4.000_t01.csv", "run_p2.000_t01.csv", "runs.csv", "summary.csv"}) {
    std::string x = slurp(fs::path(a.run_dir) / f), y = slurp(fs::path(b.run_dir) / f);
    ASSERT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, y) << f;
  }
  LogSummary s = summarize_run_log((fs::path(a.run_dir) / "run_p4.000_t01.csv").string(), cfg.mpc);
  EXPECT_EQ(s.samples, 400);
  EXPECT_DOUBLE_EQ(s.period, 4.0);
  EXPECT_EQ(s.trial, 1);
  EXPECT_EQ(s.input_violations, 0);
}

TEST_F(PipelineTest, TrialOverrideAndReport) {
  ExperimentConfig cfg = config();
  std::ostringstream sink;
  CommandOptions opt;
  opt.trials = 2;
  opt.periods = {3.0};
  opt.run_dir = (root() / "runs_trials").string();
  cmd_run_mpc(cfg, opt, sink);
  int logs = 0;
  for (const auto& e : fs::directory_iterator(opt.run_dir))
    logs += e.path().filename().string().rfind("run_p", 0) == 0;
  EXPECT_EQ(logs, 2);

  // A corrupt log is skipped and listed; the rest are still reported.
  {
    std::ofstream f(fs::path(opt.run_dir) / "run_p3.000_t09.csv");
    f << "garbage\n";
  }
  std::ostringstream out;
  cmd_report(cfg, opt, out);
  EXPECT_NE(out.str().find("run_p3.000_t09.csv"), std::string::npos) << out.str();
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "report" / "tracking.csv"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "report" / "report.txt"));
}

TEST_F(PipelineTest, ReportOnEmptyDirectoryIsDataError) {
  ExperimentConfig cfg = config();
  CommandOptions opt;
  opt.run_dir = (root() / "empty").string();
  fs::create_directories(opt.run_dir);
  std::ostringstream sink;
  try {
    cmd_report(cfg, opt, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
    EXPECT_NE(std::string(e.what()).find("no runs found"), std::string::npos);
  }
}

TEST_F(PipelineTest, DictionaryMismatchIsConfigError) {
  ExperimentConfig cfg = config();
  cfg.mpc.dictionary = "trig";
  CommandOptions opt;
  opt.run_dir = (root() / "runs_mismatch").string();
  std::ostringstream sink;
  try {
    cmd_run_mpc(cfg, opt, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(KMPC_CLI) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(PipelineTest, CliExitCodesAreDistinct) {
  const std::string exp = (root() / "exp.toml").string();
  const std::string runs = (root() / "runs_cli").string();
  EXPECT_EQ(run_cli("--config " + exp + " run-mpc --periods 4 --duration 1 --runs " + runs), 0);
  EXPECT_EQ(run_cli("--config " + exp + " report --runs " + runs), 0);
  EXPECT_EQ(run_cli("--config " + exp + " bogus-command"), exit_code(ErrorKind::Config));
  EXPECT_EQ(run_cli("--config " + write_noseed() + " report"),
            exit_code(ErrorKind::Config));
  EXPECT_EQ(run_cli("--config " + exp + " train --data " + (root() / "none.csv").string()),
            exit_code(ErrorKind::Io));
  {
    std::ofstream f(root() / "bad.csv");
    f << "x,y\n1,2\n";
    std::ofstream m(root() / "bad.csv.meta.json");
    m << slurp(root() / "out" / "dataset.csv.meta.json");
  }
  EXPECT_EQ(run_cli("--config " + exp + " train --data " + (root() / "bad.csv").string()),
            exit_code(ErrorKind::Data));
  // An unstable plant fails numerically during data generation.
  std::string unstable = write_config("unstable.toml", "");
  {
    std::string text = slurp(unstable);
    text.replace(text.find(std::string(KMPC_CONFIG_DIR) + "/plant.toml"),
                 std::string(KMPC_CONFIG_DIR).size() + 11,
                 (root() / "blowup.toml").string());
    std::ofstream f(unstable);
    f << text;
    std::ofstream b(root() / "blowup.toml");
    b << "[plant]\nstiffness_nm_per_deg = -1e6\ngravity_torque_nm = 0.0\n";
  }
  EXPECT_EQ(run_cli("--config " + unstable + " --out " + (root() / "blow").string() +
                    " generate-data --cycles 2"),
            exit_code(ErrorKind::Numerics));
}

}  // namespace
}  // namespace kmpc
