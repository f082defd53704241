#include "kmpc/plant.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kmpc/error.hpp"

namespace kmpc {
namespace {

// Samples land on the grid k*dt; snap phase boundaries so that
// accumulated rounding in t never moves a sample across a switch.
constexpr double kBoundaryTol = 1e-9;

bool finite_all(std::initializer_list<double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

double cycle_time(double t, const GaitPhaseSchedule& s) {
  double period = s.cycle_period();
  double tau = std::fmod(t - s.t_start, period);
  if (tau < 0) tau += period;
  if (period - tau < kBoundaryTol) tau = 0.0;
  return s.t_start + tau;
}

}  // namespace

void PlantParams::validate() const {
  if (!finite_all({inertia_stance, inertia_swing, viscosity, stiffness,
                   rest_angle, gravity, angle_center, angle_width,
                   velocity_slope, velocity_floor, gain_stance, gain_swing,
                   activation_tau}))
    throw config_error("plant parameters must be finite");
  if (inertia_stance <= 0 || inertia_swing <= 0)
    throw config_error("plant inertia must be positive in both phases");
  if (angle_width <= 0) throw config_error("torque-angle width must be > 0");
  if (velocity_slope < 0) throw config_error("torque-velocity slope must be >= 0");
  if (velocity_floor <= 0 || velocity_floor > 1)
    throw config_error("torque-velocity floor must lie in (0, 1]");
  if (gain_stance < 0 || gain_swing < 0)
    throw config_error("input gains are magnitudes and must be >= 0");
  if (activation_tau <= 0) throw config_error("activation time constant must be > 0");
}

PlantParams PlantParams::from_config(const ConfigFile& cf) {
  PlantParams p;
  p.inertia_stance = cf.get_double("plant.inertia_stance_kg_m2", p.inertia_stance);
  p.inertia_swing = cf.get_double("plant.inertia_swing_kg_m2", p.inertia_swing);
  p.viscosity = cf.get_double("plant.viscosity_nm_s_per_deg", p.viscosity);
  p.stiffness = cf.get_double("plant.stiffness_nm_per_deg", p.stiffness);
  p.rest_angle = cf.get_double("plant.rest_angle_deg", p.rest_angle);
  p.gravity = cf.get_double("plant.gravity_torque_nm", p.gravity);
  p.angle_center = cf.get_double("plant.torque_angle_center_deg", p.angle_center);
  p.angle_width = cf.get_double("plant.torque_angle_width_deg", p.angle_width);
  p.velocity_slope =
      cf.get_double("plant.torque_velocity_slope_per_deg_s", p.velocity_slope);
  p.velocity_floor = cf.get_double("plant.torque_velocity_floor", p.velocity_floor);
  p.gain_stance = cf.get_double("plant.gain_stance_nm_per_ma", p.gain_stance);
  p.gain_swing = cf.get_double("plant.gain_swing_nm_per_ma", p.gain_swing);
  p.activation_tau = cf.get_double("plant.activation_tau_s", p.activation_tau);
  p.validate();
  return p;
}

void GaitPhaseSchedule::validate() const {
  if (!finite_all({t_start, t_stance, t_swing, t_end}))
    throw config_error("gait schedule times must be finite");
  if (!(t_start < t_stance && t_stance <= t_swing && t_swing < t_end))
    throw config_error(
        "gait schedule must satisfy t_start < t_stance <= t_swing < t_end");
}

GaitPhaseSchedule GaitPhaseSchedule::with_period(double period) const {
  if (!(period > 0)) throw config_error("cycle period must be positive");
  double scale = period / cycle_period();
  GaitPhaseSchedule s;
  s.t_start = t_start;
  s.t_stance = t_start + (t_stance - t_start) * scale;
  s.t_swing = t_start + (t_swing - t_start) * scale;
  s.t_end = t_start + period;
  return s;
}

GaitPhaseSchedule GaitPhaseSchedule::from_config(const ConfigFile& cf) {
  GaitPhaseSchedule s;
  s.t_start = cf.get_double("schedule.t_start_s", s.t_start);
  s.t_stance = cf.get_double("schedule.t_stance_s", s.t_stance);
  s.t_swing = cf.get_double("schedule.t_swing_s", s.t_swing);
  s.t_end = cf.get_double("schedule.t_end_s", s.t_end);
  s.validate();
  return s;
}

void ReferenceParams::validate() const {
  if (!finite_all({amplitude_stance, amplitude_swing, offset}))
    throw config_error("reference parameters must be finite");
  if (amplitude_stance < 0 || amplitude_swing < 0)
    throw config_error("reference amplitudes must be >= 0");
  if (offset - amplitude_stance < -20.0 || offset + amplitude_swing > 25.0 ||
      offset < -20.0 || offset > 25.0)
    throw config_error("reference leaves the [-20, 25] deg envelope");
}

ReferenceParams ReferenceParams::from_config(const ConfigFile& cf) {
  ReferenceParams r;
  r.amplitude_stance = cf.get_double("reference.amplitude_stance_deg", r.amplitude_stance);
  r.amplitude_swing = cf.get_double("reference.amplitude_swing_deg", r.amplitude_swing);
  r.offset = cf.get_double("reference.offset_deg", r.offset);
  r.validate();
  return r;
}

int phase_indicator(double t, const GaitPhaseSchedule& schedule) {
  schedule.validate();
  double tau = cycle_time(t, schedule);
  // Closed-left intervals; a rest gap keeps the stance label.
  if (tau + kBoundaryTol >= schedule.t_swing) return 1;
  return 0;
}

double torque_angle_scale(double theta, const PlantParams& p) {
  double x = (theta - p.angle_center) / p.angle_width;
  return std::exp(-x * x);
}

double torque_velocity_scale(double theta_dot, const PlantParams& p) {
  return std::max(p.velocity_floor, 1.0 - p.velocity_slope * std::abs(theta_dot));
}

Eigen::Vector3d plant_derivative(const Eigen::Vector3d& x, double u, int sigma,
                                 const PlantParams& p) {
  const double theta = x[0], omega = x[1], a = x[2];
  const double inertia = sigma == 0 ? p.inertia_stance : p.inertia_swing;
  const double gain = sigma == 0 ? -p.gain_stance : p.gain_swing;
  const double active = gain * a * torque_angle_scale(theta, p) *
                        torque_velocity_scale(omega, p);
  const double passive = p.viscosity * omega + p.stiffness * (theta - p.rest_angle) +
                         p.gravity * std::sin(theta * kRadPerDeg);
  // Torques in N m, inertia in kg m^2: convert rad/s^2 to deg/s^2.
  return {omega, (active - passive) / inertia * kDegPerRad,
          (u - a) / p.activation_tau};
}

AnkleState plant_step(const AnkleState& s, double u, int sigma, double dt,
                      const PlantParams& p) {
  if (!(dt > 0)) throw config_error("plant_step requires dt > 0");
  if (u < 0 || !std::isfinite(u))
    throw numerics_error("plant_step requires a finite input u >= 0");
  Eigen::Vector3d x(s.theta, s.theta_dot, s.activation);
  Eigen::Vector3d k1 = plant_derivative(x, u, sigma, p);
  Eigen::Vector3d k2 = plant_derivative(x + 0.5 * dt * k1, u, sigma, p);
  Eigen::Vector3d k3 = plant_derivative(x + 0.5 * dt * k2, u, sigma, p);
  Eigen::Vector3d k4 = plant_derivative(x + dt * k3, u, sigma, p);
  Eigen::Vector3d xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!xn.allFinite()) {
    std::ostringstream os;
    os << "integration produced a non-finite state at t = " << s.t << " s";
    throw numerics_error(os.str());
  }
  return AnkleState{xn[0], xn[1], s.t + dt, xn[2]};
}

ReferenceSample reference_at(double t, const GaitPhaseSchedule& s,
                             const ReferenceParams& ref) {
  double tau = cycle_time(t, s);
  ReferenceSample r{ref.offset, 0.0};
  if (tau + kBoundaryTol >= s.t_swing) {
    double w = M_PI / (s.t_end - s.t_swing);
    double x = w * (tau - s.t_swing);
    r.theta_d = ref.offset + ref.amplitude_swing * std::sin(x);
    r.theta_dot_d = ref.amplitude_swing * w * std::cos(x);
  } else if (tau < s.t_stance) {
    double w = M_PI / (s.t_stance - s.t_start);
    double x = w * (tau - s.t_start);
    r.theta_d = ref.offset - ref.amplitude_stance * std::sin(x);
    r.theta_dot_d = -ref.amplitude_stance * w * std::cos(x);
  }
  return r;
}

ReferenceTrajectory reference_trajectory(const GaitPhaseSchedule& schedule,
                                         const ReferenceParams& ref,
                                         double sample_rate_hz, int cycles) {
  schedule.validate();
  ref.validate();
  if (!(sample_rate_hz > 0) || cycles < 1)
    throw config_error("reference needs a positive rate and at least one cycle");
  auto n = static_cast<std::size_t>(
      std::llround(cycles * schedule.cycle_period() * sample_rate_hz));
  ReferenceTrajectory out;
  for (std::size_t k = 0; k < n; ++k) {
    double t = schedule.t_start + static_cast<double>(k) / sample_rate_hz;
    ReferenceSample r = reference_at(t, schedule, ref);
    out.t.push_back(t);
    out.theta_d.push_back(r.theta_d);
    out.theta_dot_d.push_back(r.theta_dot_d);
  }
  return out;
}

Eigen::Vector3d augment_state(const AnkleState& s, const ReferenceSample& r) {
  return {s.theta - r.theta_d, s.theta_dot - r.theta_dot_d, r.theta_d};
}

Episode simulate_gait(const PlantParams& p, const GaitPhaseSchedule& schedule,
                      const InputPolicy& policy, const AnkleState& initial,
                      std::size_t samples, double dt) {
  if (samples == 0) throw config_error("simulate_gait needs at least one sample");
  Episode ep;
  ep.t.reserve(samples);
  AnkleState s = initial;
  for (std::size_t k = 0; k < samples; ++k) {
    // Keep the clock on the sample grid instead of accumulating dt.
    s.t = initial.t + static_cast<double>(k) * dt;
    int sigma = phase_indicator(s.t, schedule);
    double u = policy(k, s, sigma);
    ep.t.push_back(s.t);
    ep.theta.push_back(s.theta);
    ep.theta_dot.push_back(s.theta_dot);
    ep.u.push_back(u);
    ep.sigma.push_back(sigma);
    if (k + 1 < samples) s = plant_step(s, u, sigma, dt, p);
  }
  return ep;
}

void ProtocolConfig::validate() const {
  if (cycles < 1) throw config_error("protocol needs at least one cycle");
  if (samples_per_cycle < 2) throw config_error("protocol needs >= 2 samples per cycle");
  if (!(sample_rate_hz > 0)) throw config_error("sample rate must be positive");
  if (!(input_min >= 0 && input_min <= input_max))
    throw config_error("input sweep must satisfy 0 <= min <= max");
  if (!(init_theta_min <= init_theta_max))
    throw config_error("initial angle range is empty");
  if (!(init_velocity_rad_s >= 0)) throw config_error("initial velocity bound must be >= 0");
  if (!(train_fraction > 0 && train_fraction < 1))
    throw config_error("train fraction must lie in (0, 1)");
}

ProtocolConfig ProtocolConfig::from_config(const ConfigFile& cf) {
  ProtocolConfig c;
  c.cycles = static_cast<int>(cf.get_int("protocol.cycles", c.cycles));
  c.samples_per_cycle =
      static_cast<int>(cf.get_int("protocol.samples_per_cycle", c.samples_per_cycle));
  c.sample_rate_hz = cf.get_double("protocol.sample_rate_hz", c.sample_rate_hz);
  c.input_min = cf.get_double("protocol.input_min_ma", c.input_min);
  c.input_max = cf.get_double("protocol.input_max_ma", c.input_max);
  c.init_theta_min = cf.get_double("protocol.init_theta_min_deg", c.init_theta_min);
  c.init_theta_max = cf.get_double("protocol.init_theta_max_deg", c.init_theta_max);
  c.init_velocity_rad_s =
      cf.get_double("protocol.init_velocity_max_rad_s", c.init_velocity_rad_s);
  c.init_input_max = cf.get_double("protocol.init_input_max_ma", c.init_input_max);
  c.alternate_start_phase =
      cf.get_bool("protocol.alternate_start_phase", c.alternate_start_phase);
  c.train_fraction = cf.get_double("protocol.train_fraction", c.train_fraction);
  c.validate();
  return c;
}

std::size_t TrajectoryDataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

namespace {

Episode training_episode(const PlantParams& p, const GaitPhaseSchedule& schedule,
                         const ProtocolConfig& c, std::uint64_t seed, int i) {
  Rng rng(seed, static_cast<std::uint64_t>(i));
  AnkleState s;
  s.theta = rng.uniform(c.init_theta_min, c.init_theta_max);
  s.theta_dot = rng.uniform(-c.init_velocity_rad_s, c.init_velocity_rad_s) * kDegPerRad;
  double u0 = std::min(rng.uniform(c.input_min, c.init_input_max), c.input_max);
  s.activation = u0;
  double u1 = c.cycles > 1
                  ? c.input_min + (c.input_max - c.input_min) * i / (c.cycles - 1)
                  : c.input_max;
  s.t = (c.alternate_start_phase && i % 2 == 1) ? schedule.t_swing : schedule.t_start;
  const int n = c.samples_per_cycle;
  auto ramp = [&](std::size_t k, const AnkleState&, int) {
    double u = u0 + (u1 - u0) * static_cast<double>(k) / (n - 1);
    return std::clamp(u, c.input_min, c.input_max);  // absorb rounding at the ends
  };
  return simulate_gait(p, schedule, ramp, s, n, 1.0 / c.sample_rate_hz);
}

}  // namespace

TrajectoryDataset generate_training_dataset(const PlantParams& p,
                                            const GaitPhaseSchedule& schedule,
                                            const ReferenceParams& ref,
                                            const ProtocolConfig& protocol,
                                            std::uint64_t seed, Execution exec) {
  p.validate();
  schedule.validate();
  ref.validate();
  protocol.validate();
  double cycle_s = protocol.samples_per_cycle / protocol.sample_rate_hz;
  if (std::abs(cycle_s - schedule.cycle_period()) > 1e-9)
    throw config_error("samples_per_cycle / sample_rate must equal the schedule's cycle period");

  TrajectoryDataset ds;
  ds.sample_rate_hz = protocol.sample_rate_hz;
  ds.schedule = schedule;
  ds.reference = ref;
  ds.cycles = protocol.cycles;
  ds.seed = seed;
  std::ostringstream sweep;
  sweep << "per-episode linear ramp from a random start level to "
        << protocol.input_min << " + (" << protocol.input_max << " - "
        << protocol.input_min << ") * i / (cycles - 1) mA";
  ds.input_sweep = sweep.str();
  ds.episodes.resize(protocol.cycles);

  if (exec == Execution::Parallel) {
    // Exceptions may not cross the parallel region; collect the first one.
    std::string failure;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < protocol.cycles; ++i) {
      try {
        ds.episodes[i] = training_episode(p, schedule, protocol, seed, i);
      } catch (const std::exception& e) {
#pragma omp critical
        if (failure.empty()) failure = e.what();
      }
    }
    if (!failure.empty()) throw numerics_error(failure);
  } else {
    for (int i = 0; i < protocol.cycles; ++i)
      ds.episodes[i] = training_episode(p, schedule, protocol, seed, i);
  }
  return ds;
}

void split_dataset(const TrajectoryDataset& all, double fraction,
                   TrajectoryDataset& train, TrajectoryDataset& test) {
  if (!(fraction > 0 && fraction < 1)) throw config_error("split fraction must lie in (0, 1)");
  std::size_t n = all.episodes.size();
  auto n_train = static_cast<std::size_t>(std::llround(fraction * n));
  if (n_train == 0 || n_train >= n)
    throw data_error("dataset too small for a train/test split by episode");
  train = all;
  test = all;
  train.episodes.assign(all.episodes.begin(), all.episodes.begin() + n_train);
  test.episodes.assign(all.episodes.begin() + n_train, all.episodes.end());
}

}  // namespace kmpc
