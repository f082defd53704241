#include <fstream>

#include "json.hpp"
#include "kmpc/error.hpp"
#include "kmpc/koopman.hpp"

namespace kmpc {
namespace {

using ojson = nlohmann::ordered_json;

ojson matrix_json(const Eigen::MatrixXd& M) {
  ojson j;
  j["rows"] = M.rows();
  j["cols"] = M.cols();
  std::vector<double> data;
  data.reserve(M.size());
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) data.push_back(M(r, c));
  j["data"] = data;
  return j;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw data_error("matrix data length does not match rows * cols");
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = data[r * cols + c];
  return M;
}

ojson diag_json(const FitDiagnostics& d) {
  ojson j;
  j["samples"] = d.samples;
  j["residual"] = d.residual;
  j["cond_G"] = std::isfinite(d.cond_G) ? ojson(d.cond_G) : ojson("inf");
  j["rank"] = d.rank;
  j["rank_deficient"] = d.rank_deficient;
  return j;
}

FitDiagnostics diag_from(const nlohmann::json& j) {
  FitDiagnostics d;
  d.samples = j.at("samples").get<long>();
  d.residual = j.at("residual").get<double>();
  d.cond_G = j.at("cond_G").is_string() ? INFINITY : j.at("cond_G").get<double>();
  d.rank = j.at("rank").get<int>();
  d.rank_deficient = j.at("rank_deficient").get<bool>();
  return d;
}

}  // namespace

void write_model(const KoopmanModel& m, const std::string& path) {
  m.validate();
  ojson j;
  j["format"] = "kmpc-model/1";
  ojson d;
  d["name"] = m.dict.name();
  d["embedding"] = m.dict.embedding;
  d["trig_scales"] = m.dict.trig_scales;
  d["trig_velocity_scale"] = m.dict.trig_velocity_scale;
  d["features"] = m.dict.feature_names();
  d["n_x"] = m.nx();
  d["n_u"] = m.nu();
  j["dictionary"] = d;
  j["L"] = m.dict.embedding;
  const char* names[2] = {"stance", "swing"};
  for (int p = 0; p < 2; ++p) {
    ojson ph;
    ph["sigma"] = p;
    ph["K_xx"] = matrix_json(m.phase[p].Kxx);
    ph["K_xu"] = matrix_json(m.phase[p].Kxu);
    ph["diagnostics"] = diag_json(m.phase[p].diag);
    j["phases"][names[p]] = ph;
  }
  j["C"] = matrix_json(m.C);
  j["diagnostics"] = {{"projection_rmse", m.projection_rmse},
                      {"stance_residual", m.phase[0].diag.residual},
                      {"swing_residual", m.phase[1].diag.residual}};
  j["fit"] = {{"ridge", m.options.ridge},
              {"cutoff", m.options.cutoff},
              {"scale", m.options.scale}};
  j["training_config_hash"] = m.config_hash;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write model file '" + path + "'");
  f << j.dump(1) << '\n';
  if (!f) throw io_error("failed while writing '" + path + "'");
}

KoopmanModel read_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open model file '" + path + "'");
  KoopmanModel m;
  try {
    nlohmann::json j;
    f >> j;
    if (j.at("format").get<std::string>() != "kmpc-model/1")
      throw data_error("unsupported model format in '" + path + "'");
    const auto& d = j.at("dictionary");
    m.dict = ObservableDictionary::make(d.at("name").get<std::string>(),
                                        d.at("embedding").get<int>());
    m.dict.trig_scales = d.at("trig_scales").get<std::vector<double>>();
    m.dict.trig_velocity_scale = d.at("trig_velocity_scale").get<double>();
    m.dict.validate();
    const char* names[2] = {"stance", "swing"};
    for (int p = 0; p < 2; ++p) {
      const auto& ph = j.at("phases").at(names[p]);
      m.phase[p].Kxx = matrix_from(ph.at("K_xx"));
      m.phase[p].Kxu = matrix_from(ph.at("K_xu"));
      m.phase[p].diag = diag_from(ph.at("diagnostics"));
    }
    m.C = matrix_from(j.at("C"));
    m.projection_rmse = j.at("diagnostics").at("projection_rmse").get<double>();
    m.options.ridge = j.at("fit").at("ridge").get<double>();
    m.options.cutoff = j.at("fit").at("cutoff").get<double>();
    m.options.scale = j.at("fit").at("scale").get<bool>();
    m.config_hash = j.at("training_config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error("corrupt model file '" + path + "': " + e.what());
  }
  m.validate();
  return m;
}

}  // namespace kmpc
