#include "kmpc/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kmpc/error.hpp"

namespace kmpc {
namespace {

constexpr Eigen::Index kMaxChunks = 16;
constexpr Eigen::Index kMinChunkCols = 256;

void check_pair(const Eigen::MatrixXd& D0, const Eigen::MatrixXd& D1) {
  if (D0.cols() != D1.cols())
    throw data_error("snapshot matrices must have the same number of columns");
  if (D0.cols() == 0) throw data_error("snapshot matrices are empty");
}

}  // namespace

GramPair gram_serial(const Eigen::MatrixXd& D0, const Eigen::MatrixXd& D1) {
  check_pair(D0, D1);
  GramPair out{Eigen::MatrixXd::Zero(D1.rows(), D0.rows()),
               Eigen::MatrixXd::Zero(D0.rows(), D0.rows())};
  for (Eigen::Index j = 0; j < D0.cols(); ++j) {
    out.F.noalias() += D1.col(j) * D0.col(j).transpose();
    out.G.noalias() += D0.col(j) * D0.col(j).transpose();
  }
  const double inv_m = 1.0 / static_cast<double>(D0.cols());
  out.F *= inv_m;
  out.G *= inv_m;
  return out;
}

GramPair gram_parallel(const Eigen::MatrixXd& D0, const Eigen::MatrixXd& D1) {
  check_pair(D0, D1);
  const Eigen::Index m = D0.cols();
  const Eigen::Index chunks =
      std::clamp<Eigen::Index>(m / kMinChunkCols, 1, kMaxChunks);
  std::vector<GramPair> part(chunks);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index lo = m * c / chunks;
    const Eigen::Index hi = m * (c + 1) / chunks;
    const auto a = D0.middleCols(lo, hi - lo);
    part[c].F.noalias() = D1.middleCols(lo, hi - lo) * a.transpose();
    part[c].G.noalias() = a * a.transpose();
  }
  GramPair out = std::move(part[0]);
  for (Eigen::Index c = 1; c < chunks; ++c) {
    out.F += part[c].F;
    out.G += part[c].G;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  out.F *= inv_m;
  out.G *= inv_m;
  // Rounding in the blocked product can leave G a hair off symmetric.
  out.G = 0.5 * (out.G + out.G.transpose()).eval();
  return out;
}

double relative_residual(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& A,
                         const Eigen::MatrixXd& X) {
  const Eigen::Index m = X.cols();
  const Eigen::Index chunks =
      std::clamp<Eigen::Index>(m / kMinChunkCols, 1, kMaxChunks);
  std::vector<double> num(chunks, 0.0), den(chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index lo = m * c / chunks;
    const Eigen::Index hi = m * (c + 1) / chunks;
    auto y = Y.middleCols(lo, hi - lo);
    num[c] = (y - A * X.middleCols(lo, hi - lo)).squaredNorm();
    den[c] = y.squaredNorm();
  }
  double n = 0, d = 0;
  for (Eigen::Index c = 0; c < chunks; ++c) {
    n += num[c];
    d += den[c];
  }
  return d > 0 ? std::sqrt(n / d) : std::sqrt(n);
}

}  // namespace kmpc
