#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/SVD>

#include "worldprobe/binio.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/probes.hpp"

namespace worldprobe {

namespace {

constexpr double kLeverageLimit = 1.0 - 1e-12;
constexpr double kTieTolerance = 1e-12;

void check_design(const Matrix& A, const Matrix& Y) {
  if (A.rows() != Y.rows()) {
    throw DataError("design has " + std::to_string(A.rows()) + " rows but targets have " +
                    std::to_string(Y.rows()));
  }
  if (A.rows() < 2) throw DataError("ridge needs at least 2 rows");
  if (A.cols() < 1 || Y.cols() < 1) throw DataError("ridge needs at least one feature and one target");
  if (!A.allFinite()) throw DataError("non-finite value in activations");
  if (!Y.allFinite()) throw DataError("non-finite value in targets");
}

}  // namespace

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 17; ++i) grid.push_back(std::pow(10.0, -2.0 + 0.5 * i));
  return grid;
}

RidgeSolver::RidgeSolver(const Matrix& A, const Matrix& Y, const RidgeOptions& opts)
    : n_(static_cast<std::size_t>(A.rows())), d_(static_cast<std::size_t>(A.cols())), opts_(opts) {
  check_design(A, Y);
  feature_mean_ = A.colwise().mean().transpose();
  Matrix Ac = A.rowwise() - feature_mean_.transpose();
  feature_scale_ = Vector::Ones(A.cols());
  if (opts.standardize) {
    for (Eigen::Index j = 0; j < Ac.cols(); ++j) {
      const double sd = std::sqrt(Ac.col(j).squaredNorm() / static_cast<double>(n_ - 1));
      if (sd > 0.0) feature_scale_(j) = sd;
    }
    Ac = Ac * feature_scale_.cwiseInverse().asDiagonal();
  }
  target_mean_ = Y.colwise().mean().transpose();
  Yc_ = Y.rowwise() - target_mean_.transpose();
  y_scale_ = Y.squaredNorm() / static_cast<double>(Y.size());

  Eigen::BDCSVD<Matrix> svd(Ac, Eigen::ComputeThinU | Eigen::ComputeThinV);
  U_ = svd.matrixU();
  V_ = svd.matrixV();
  s_ = svd.singularValues();
  const double tol = static_cast<double>(std::max(n_, d_)) * std::numeric_limits<double>::epsilon() *
                     (s_.size() ? s_(0) : 0.0);
  rank_ = 0;
  for (Eigen::Index k = 0; k < s_.size(); ++k) rank_ += s_(k) > tol;
  UtY_ = U_.transpose() * Yc_;
}

void RidgeSolver::check_lambda(double lambda) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DataError("lambda must be finite and >= 0");
  if (lambda == 0.0 && rank_ < d_) {
    throw NumericalError("singular system at lambda=0: centered design has rank " + std::to_string(rank_) +
                         " < " + std::to_string(d_) + " features" +
                         (n_ <= d_ ? " (n <= d requires lambda > 0)" : ""));
  }
}

ProbeModel RidgeSolver::solve(double lambda) const {
  check_lambda(lambda);
  Vector f(s_.size());
  for (Eigen::Index k = 0; k < s_.size(); ++k) {
    const double s = s_(k);
    f(k) = (static_cast<std::size_t>(k) < rank_) ? s / (s * s + lambda) : 0.0;
  }
  ProbeModel p;
  p.weights = feature_scale_.cwiseInverse().asDiagonal() * (V_ * (f.asDiagonal() * UtY_));
  p.lambda = lambda;
  p.feature_mean = feature_mean_;
  p.target_mean = target_mean_;
  p.intercept = target_mean_ - p.weights.transpose() * feature_mean_;
  p.standardized = opts_.standardize;
  p.feature_scale = feature_scale_;
  if (!p.weights.allFinite()) throw NumericalError("ridge produced non-finite weights");
  return p;
}

Matrix RidgeSolver::loo_residuals(double lambda) const {
  check_lambda(lambda);
  Vector g(s_.size());
  for (Eigen::Index k = 0; k < s_.size(); ++k) {
    const double s2 = s_(k) * s_(k);
    g(k) = (static_cast<std::size_t>(k) < rank_) ? s2 / (s2 + lambda) : 0.0;
  }
  const Matrix fitted = U_ * (g.asDiagonal() * UtY_);
  Matrix resid = Yc_ - fitted;
  // The unpenalized intercept contributes 1/n to every leverage.
  const Vector leverage =
      (U_.array().square().matrix() * g).array() + 1.0 / static_cast<double>(n_);
  for (Eigen::Index i = 0; i < leverage.size(); ++i) {
    if (leverage(i) >= kLeverageLimit) {
      throw NumericalError("leverage of row " + std::to_string(i) + " is " + std::to_string(leverage(i)) +
                           " at lambda=" + std::to_string(lambda) + "; leave-one-out residual undefined");
    }
    resid.row(i) /= (1.0 - leverage(i));
  }
  return resid;
}

double RidgeSolver::press(double lambda) const {
  return loo_residuals(lambda).squaredNorm() / static_cast<double>(n_);
}

LoocvCurve RidgeSolver::curve(const std::vector<double>& grid) const {
  if (grid.empty()) throw UsageError("lambda grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || !std::isfinite(grid[i])) throw UsageError("lambda grid values must be finite and >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw UsageError("lambda grid must be strictly ascending");
  }
  LoocvCurve c;
  c.lambdas = grid;
  c.press.reserve(grid.size());
  for (double l : grid) c.press.push_back(press(l));
  const double best = *std::min_element(c.press.begin(), c.press.end());
  const double tol = kTieTolerance * y_scale_;
  for (std::size_t i = 0; i < c.press.size(); ++i) {
    if (c.press[i] <= best + tol) c.chosen = i;  // ties go to the larger lambda
  }
  return c;
}

std::string LoocvCurve::to_csv() const {
  std::string out = "lambda,press,chosen\n";
  char buf[96];
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", lambdas[i], press[i], i == chosen ? 1 : 0);
    out += buf;
  }
  return out;
}

ProbeModel fit_ridge(const Matrix& A, const Matrix& Y, double lambda, const RidgeOptions& opts) {
  if (lambda == 0.0 && A.rows() <= A.cols()) {
    throw NumericalError("singular system at lambda=0: n=" + std::to_string(A.rows()) + " <= d=" +
                         std::to_string(A.cols()) + " after centering; use lambda > 0");
  }
  return RidgeSolver(A, Y, opts).solve(lambda);
}

LoocvCurve tune_lambda_loocv(const Matrix& A, const Matrix& Y, const std::vector<double>& grid,
                             const RidgeOptions& opts) {
  return RidgeSolver(A, Y, opts).curve(grid);
}

RidgeCvFit fit_ridge_cv(const Matrix& A, const Matrix& Y, const std::vector<double>& grid,
                        const RidgeOptions& opts) {
  RidgeSolver solver(A, Y, opts);
  RidgeCvFit out;
  out.curve = solver.curve(grid);
  out.probe = solver.solve(out.curve.chosen_lambda());
  return out;
}

Matrix predict(const ProbeModel& probe, const Matrix& A) {
  if (static_cast<std::size_t>(A.cols()) != probe.input_dim()) {
    throw DataError("probe expects " + std::to_string(probe.input_dim()) + " features, got " +
                    std::to_string(A.cols()));
  }
  return ((A.rowwise() - probe.feature_mean.transpose()) * probe.weights).rowwise() +
         probe.target_mean.transpose();
}

// ---------------------------------------------------------------------------
// PRBE

std::string encode_probe(const ProbeModel& p) {
  binio::Writer w;
  w.bytes("PRBE");
  w.uint<std::uint32_t>(1);
  const auto d = p.input_dim(), t = p.output_dim();
  w.uint<std::uint64_t>(d);
  w.uint<std::uint64_t>(t);
  w.f64(p.lambda);
  w.uint<std::uint8_t>(p.standardized ? 1 : 0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < t; ++j) w.f64(p.weights(i, j));
  w.f64_array({p.intercept.data(), t});
  w.f64_array({p.feature_mean.data(), d});
  w.f64_array({p.target_mean.data(), t});
  Vector scale = p.feature_scale.size() == static_cast<Eigen::Index>(d) ? p.feature_scale : Vector::Ones(d);
  w.f64_array({scale.data(), d});
  w.str16(p.meta.model_id);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.meta.layer));
  w.str16(p.meta.prompt_id);
  w.str16(p.meta.split);
  return w.take();
}

ProbeModel decode_probe(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  if (r.remaining() < 4 || r.bytes(4) != "PRBE") throw DataError(source + ": bad magic (expected PRBE)");
  const auto version = r.uint<std::uint32_t>();
  if (version != 1) throw DataError(source + ": unsupported PRBE version " + std::to_string(version));
  const auto d = r.uint<std::uint64_t>();
  const auto t = r.uint<std::uint64_t>();
  if (d == 0 || t == 0 || d > (1u << 26) || t > 1024) throw DataError(source + ": implausible probe shape");
  ProbeModel p;
  p.lambda = r.f64();
  p.standardized = r.uint<std::uint8_t>() != 0;
  p.weights.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t));
  r.need(d * t * 8);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < t; ++j) p.weights(i, j) = r.f64();
  auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), v.size()).eval(); };
  p.intercept = to_vec(r.f64_array(t));
  p.feature_mean = to_vec(r.f64_array(d));
  p.target_mean = to_vec(r.f64_array(t));
  p.feature_scale = to_vec(r.f64_array(d));
  p.meta.model_id = r.str16();
  p.meta.layer = static_cast<std::int32_t>(r.uint<std::uint32_t>());
  p.meta.prompt_id = r.str16();
  p.meta.split = r.str16();
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after probe");
  if (!p.weights.allFinite()) throw DataError(source + ": non-finite probe weights");
  return p;
}

void save_probe(const std::string& path, const ProbeModel& p) { binio::write_file(path, encode_probe(p)); }

ProbeModel load_probe(const std::string& path) { return decode_probe(binio::read_file(path), path); }

}  // namespace worldprobe
