#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kmpc/error.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {
namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string dataset_meta_path(const std::string& csv_path) {
  return csv_path + ".meta.json";
}

void write_dataset(const TrajectoryDataset& ds, const std::string& csv_path) {
  std::ofstream f(csv_path, std::ios::binary);
  if (!f) throw io_error("cannot write dataset '" + csv_path + "'");
  f << "t,theta,theta_dot,u,sigma,episode\n";
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    for (std::size_t k = 0; k < ep.size(); ++k) {
      f << fmt(ep.t[k]) << ',' << fmt(ep.theta[k]) << ',' << fmt(ep.theta_dot[k])
        << ',' << fmt(ep.u[k]) << ',' << ep.sigma[k] << ',' << e << '\n';
    }
  }
  if (!f) throw io_error("failed while writing '" + csv_path + "'");

  nlohmann::ordered_json meta;
  meta["format"] = "kmpc-dataset/1";
  meta["sample_rate_hz"] = ds.sample_rate_hz;
  meta["cycles"] = ds.cycles;
  meta["episodes"] = ds.episodes.size();
  meta["samples"] = ds.total_samples();
  meta["seed"] = ds.seed;
  meta["input_sweep"] = ds.input_sweep;
  meta["schedule"] = {{"t_start_s", ds.schedule.t_start},
                      {"t_stance_s", ds.schedule.t_stance},
                      {"t_swing_s", ds.schedule.t_swing},
                      {"t_end_s", ds.schedule.t_end}};
  meta["reference"] = {{"amplitude_stance_deg", ds.reference.amplitude_stance},
                       {"amplitude_swing_deg", ds.reference.amplitude_swing},
                       {"offset_deg", ds.reference.offset}};
  std::ofstream m(dataset_meta_path(csv_path), std::ios::binary);
  if (!m) throw io_error("cannot write '" + dataset_meta_path(csv_path) + "'");
  m << meta.dump(2) << '\n';
}

TrajectoryDataset read_dataset(const std::string& csv_path) {
  TrajectoryDataset ds;
  {
    std::ifstream m(dataset_meta_path(csv_path));
    if (!m) throw io_error("missing dataset sidecar '" + dataset_meta_path(csv_path) + "'");
    nlohmann::json meta;
    try {
      m >> meta;
      ds.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
      ds.cycles = meta.at("cycles").get<int>();
      ds.seed = meta.at("seed").get<std::uint64_t>();
      ds.input_sweep = meta.at("input_sweep").get<std::string>();
      const auto& s = meta.at("schedule");
      ds.schedule.t_start = s.at("t_start_s").get<double>();
      ds.schedule.t_stance = s.at("t_stance_s").get<double>();
      ds.schedule.t_swing = s.at("t_swing_s").get<double>();
      ds.schedule.t_end = s.at("t_end_s").get<double>();
      const auto& r = meta.at("reference");
      ds.reference.amplitude_stance = r.at("amplitude_stance_deg").get<double>();
      ds.reference.amplitude_swing = r.at("amplitude_swing_deg").get<double>();
      ds.reference.offset = r.at("offset_deg").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw data_error("corrupt dataset sidecar '" + dataset_meta_path(csv_path) +
                       "': " + e.what());
    }
  }
  ds.schedule.validate();
  ds.reference.validate();

  std::ifstream f(csv_path);
  if (!f) throw io_error("cannot open dataset '" + csv_path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "t,theta,theta_dot,u,sigma,episode")
    throw data_error(csv_path + ": unexpected header");
  long lineno = 1;
  long current = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    double t, th, om, u;
    int sigma;
    long ep;
    char extra;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%d,%ld%c", &t, &th, &om, &u,
                    &sigma, &ep, &extra) != 6)
      throw data_error(csv_path + ":" + std::to_string(lineno) + ": malformed row");
    if (sigma != 0 && sigma != 1)
      throw data_error(csv_path + ":" + std::to_string(lineno) + ": sigma must be 0 or 1");
    if (ep != current) {
      if (ep != current + 1)
        throw data_error(csv_path + ":" + std::to_string(lineno) +
                         ": episodes must be contiguous and numbered from 0");
      ds.episodes.emplace_back();
      current = ep;
    }
    Episode& e = ds.episodes.back();
    e.t.push_back(t);
    e.theta.push_back(th);
    e.theta_dot.push_back(om);
    e.u.push_back(u);
    e.sigma.push_back(sigma);
  }
  if (ds.episodes.empty()) throw data_error(csv_path + ": no samples");
  return ds;
}

}  // namespace kmpc
