#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "worldprobe/errors.hpp"
#include "worldprobe/probes.hpp"

namespace worldprobe {

PcaProjector fit_pca(const Matrix& A, std::size_t k) {
  const auto n = static_cast<std::size_t>(A.rows());
  const auto d = static_cast<std::size_t>(A.cols());
  if (n < 2) throw DataError("PCA needs at least 2 rows");
  if (k < 1 || k > std::min(n - 1, d)) {
    throw DataError("PCA k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n - 1, d)) + "]");
  }
  if (!A.allFinite()) throw DataError("non-finite value in activations");

  PcaProjector p;
  p.k = k;
  p.mean = A.colwise().mean().transpose();
  const Matrix Ac = A.rowwise() - p.mean.transpose();
  Eigen::BDCSVD<Matrix> svd(Ac, Eigen::ComputeThinV);
  const auto kk = static_cast<Eigen::Index>(k);
  p.components = svd.matrixV().leftCols(kk).transpose();
  // Sign convention: the largest-magnitude loading of each component is positive.
  for (Eigen::Index r = 0; r < kk; ++r) {
    Eigen::Index arg;
    p.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (p.components(r, arg) < 0) p.components.row(r) *= -1.0;
  }
  p.explained_variance = svd.singularValues().head(kk).array().square() / static_cast<double>(n - 1);
  return p;
}

Matrix project(const PcaProjector& proj, const Matrix& A) {
  if (A.cols() != proj.mean.size()) {
    throw DataError("projector expects " + std::to_string(proj.mean.size()) + " features, got " +
                    std::to_string(A.cols()));
  }
  return (A.rowwise() - proj.mean.transpose()) * proj.components.transpose();
}

}  // namespace worldprobe
