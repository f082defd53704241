#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kmpc/config_file.hpp"

namespace kmpc {

constexpr double kDegPerRad = 57.295779513082320876798;
constexpr double kRadPerDeg = 0.017453292519943295769237;

enum class Execution { Serial, Parallel };

// Physical ankle state. `activation` is the muscle activation (mA
// equivalent) carried by the first-order activation dynamics.
struct AnkleState {
  double theta = 0.0;      // deg, positive = dorsiflexion
  double theta_dot = 0.0;  // deg/s
  double t = 0.0;          // s
  double activation = 0.0;
};

// Switched Hill-type ankle model. Stance (sigma = 0) drives the
// plantarflexor, swing (sigma = 1) the dorsiflexor.
struct PlantParams {
  double inertia_stance = 0.02;    // kg m^2
  double inertia_swing = 0.02;     // kg m^2
  double viscosity = 0.0075;       // N m s / deg
  double stiffness = 0.014;        // N m / deg
  double rest_angle = 0.0;         // deg
  double gravity = 0.53;           // N m
  double angle_center = 0.0;       // deg
  double angle_width = 300.0;      // deg
  double velocity_slope = 1.0e-4;  // per deg/s
  double velocity_floor = 0.5;
  double gain_stance = 0.023;      // N m / mA
  double gain_swing = 0.029;       // N m / mA
  double activation_tau = 0.02;    // s

  void validate() const;
  static PlantParams from_config(const ConfigFile& cf);
};

struct GaitPhaseSchedule {
  double t_start = 0.0;
  double t_stance = 0.5;
  double t_swing = 0.5;
  double t_end = 1.0;

  double cycle_period() const { return t_end - t_start; }
  void validate() const;
  // Same phase proportions, stretched to a new cycle period.
  GaitPhaseSchedule with_period(double period) const;
  static GaitPhaseSchedule from_config(const ConfigFile& cf);
};

// Half-sine excursions: plantarflexion during stance, dorsiflexion
// during swing, around `offset`.
struct ReferenceParams {
  double amplitude_stance = 15.0;  // deg
  double amplitude_swing = 15.0;   // deg
  double offset = 0.0;             // deg

  void validate() const;
  static ReferenceParams from_config(const ConfigFile& cf);
};

struct ReferenceSample {
  double theta_d = 0.0;
  double theta_dot_d = 0.0;
};

struct ReferenceTrajectory {
  std::vector<double> t;
  std::vector<double> theta_d;
  std::vector<double> theta_dot_d;
};

int phase_indicator(double t, const GaitPhaseSchedule& schedule);

double torque_angle_scale(double theta, const PlantParams& p);
double torque_velocity_scale(double theta_dot, const PlantParams& p);

// d/dt of (theta, theta_dot, activation) under phase `sigma`.
Eigen::Vector3d plant_derivative(const Eigen::Vector3d& x, double u,
                                 int sigma, const PlantParams& p);

AnkleState plant_step(const AnkleState& s, double u, int sigma, double dt,
                      const PlantParams& p);

ReferenceSample reference_at(double t, const GaitPhaseSchedule& schedule,
                             const ReferenceParams& ref);
ReferenceTrajectory reference_trajectory(const GaitPhaseSchedule& schedule,
                                         const ReferenceParams& ref,
                                         double sample_rate_hz, int cycles = 1);

// z = [e_theta, e_theta_dot, theta_d].
Eigen::Vector3d augment_state(const AnkleState& s, const ReferenceSample& r);

struct Episode {
  std::vector<double> t;
  std::vector<double> theta;
  std::vector<double> theta_dot;
  std::vector<double> u;
  std::vector<int> sigma;

  std::size_t size() const { return t.size(); }
  AnkleState state(std::size_t k) const {
    return AnkleState{theta[k], theta_dot[k], t[k], 0.0};
  }
};

// Returns the input to hold over [t_k, t_k + dt).
using InputPolicy =
    std::function<double(std::size_t k, const AnkleState& s, int sigma)>;

Episode simulate_gait(const PlantParams& p, const GaitPhaseSchedule& schedule,
                      const InputPolicy& policy, const AnkleState& initial,
                      std::size_t samples, double dt);

struct ProtocolConfig {
  int cycles = 150;
  int samples_per_cycle = 200;
  double sample_rate_hz = 200.0;
  double input_min = 0.0;          // mA
  double input_max = 30.0;         // mA
  double init_theta_min = -20.0;   // deg
  double init_theta_max = 25.0;    // deg
  double init_velocity_rad_s = 2.0;
  double init_input_max = 50.0;    // mA, clipped to input_max
  bool alternate_start_phase = true;
  double train_fraction = 0.8;

  void validate() const;
  static ProtocolConfig from_config(const ConfigFile& cf);
};

struct TrajectoryDataset {
  std::vector<Episode> episodes;
  double sample_rate_hz = 200.0;
  GaitPhaseSchedule schedule;
  ReferenceParams reference;
  int cycles = 0;
  std::uint64_t seed = 0;
  std::string input_sweep;

  std::size_t total_samples() const;
  ReferenceSample reference_at_time(double t) const {
    return kmpc::reference_at(t, schedule, reference);
  }
};

TrajectoryDataset generate_training_dataset(
    const PlantParams& p, const GaitPhaseSchedule& schedule,
    const ReferenceParams& ref, const ProtocolConfig& protocol,
    std::uint64_t seed, Execution exec = Execution::Parallel);

// Episode-level split: the first `fraction` of episodes train, the rest test.
void split_dataset(const TrajectoryDataset& all, double fraction,
                   TrajectoryDataset& train, TrajectoryDataset& test);

// Deterministic per-stream generator.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  double uniform(double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

// Dataset files: CSV plus a JSON sidecar holding the generator metadata.
void write_dataset(const TrajectoryDataset& ds, const std::string& csv_path);
TrajectoryDataset read_dataset(const std::string& csv_path);
std::string dataset_meta_path(const std::string& csv_path);

}  // namespace kmpc
