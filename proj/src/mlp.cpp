#include <algorithm>
#include <cmath>
#include <numeric>

#include "worldprobe/errors.hpp"
#include "worldprobe/probes.hpp"
#include "worldprobe/rng.hpp"

namespace worldprobe {

namespace {

struct Standardizer {
  Vector x_mean, x_scale, y_mean, y_scale;

  Standardizer(const Matrix& A, const Matrix& Y) {
    x_mean = A.colwise().mean().transpose();
    y_mean = Y.colwise().mean().transpose();
    x_scale = scale_of(A, x_mean);
    y_scale = scale_of(Y, y_mean);
  }

  static Vector scale_of(const Matrix& M, const Vector& mean) {
    Vector s(M.cols());
    const double denom = static_cast<double>(std::max<Eigen::Index>(M.rows() - 1, 1));
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      const double sd = std::sqrt((M.col(j).array() - mean(j)).square().sum() / denom);
      s(j) = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }

  Matrix x(const Matrix& A) const {
    return (A.rowwise() - x_mean.transpose()) * x_scale.cwiseInverse().asDiagonal();
  }
  Matrix y(const Matrix& Y) const {
    return (Y.rowwise() - y_mean.transpose()) * y_scale.cwiseInverse().asDiagonal();
  }

  // Map standardized-space parameters to raw units.
  MlpParams fold(const MlpParams& s) const {
    MlpParams r;
    r.w1 = s.w1 * x_scale.cwiseInverse().asDiagonal();
    r.b1 = s.b1 - r.w1 * x_mean;
    r.w2 = y_scale.asDiagonal() * s.w2;
    r.b2 = y_scale.cwiseProduct(s.b2) + y_mean;
    return r;
  }
};

MlpParams init_params(std::size_t d, std::size_t t, const MlpConfig& cfg) {
  if (cfg.hidden_width == 0) throw UsageError("MLP hidden width must be positive");
  Rng rng(cfg.seed);
  const auto h = static_cast<Eigen::Index>(cfg.hidden_width);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(h));
  MlpParams p;
  p.w1.resize(h, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < p.w1.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j) p.w1(i, j) = rng.uniform(-a1, a1);
  p.b1.resize(h);
  for (auto& v : p.b1) v = rng.uniform(-a1, a1);
  p.w2.resize(static_cast<Eigen::Index>(t), h);
  for (Eigen::Index i = 0; i < p.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w2.cols(); ++j) p.w2(i, j) = rng.uniform(-a2, a2);
  p.b2.resize(static_cast<Eigen::Index>(t));
  for (auto& v : p.b2) v = rng.uniform(-a2, a2);
  return p;
}

Matrix forward(const MlpParams& p, const Matrix& X, Matrix* pre) {
  Matrix z = (X * p.w1.transpose()).rowwise() + p.b1.transpose();
  Matrix h = z.cwiseMax(0.0);
  if (pre) *pre = std::move(z);
  return (h * p.w2.transpose()).rowwise() + p.b2.transpose();
}

void check_inputs(const Matrix& A, const Matrix& Y) {
  if (A.rows() != Y.rows()) throw DataError("MLP: activation and target row counts differ");
  if (A.rows() < 2) throw DataError("MLP needs at least 2 rows");
  if (!A.allFinite() || !Y.allFinite()) throw DataError("MLP: non-finite input");
}

struct Adam {
  MlpParams m, v;
  std::size_t t = 0;

  explicit Adam(const MlpParams& p) {
    m.w1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
    m.b1 = Vector::Zero(p.b1.size());
    m.w2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
    m.b2 = Vector::Zero(p.b2.size());
    v = m;
  }

  template <typename P, typename G, typename M>
  static void update(P& param, const G& grad, M& m1, M& m2, const MlpConfig& c, double bc1, double bc2) {
    m1 = c.beta1 * m1 + (1.0 - c.beta1) * grad;
    m2 = c.beta2 * m2 + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + c.eps);
  }

  void step(MlpParams& p, const MlpParams& g, const MlpConfig& c) {
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    update(p.w1, g.w1, m.w1, v.w1, c, bc1, bc2);
    update(p.b1, g.b1, m.b1, v.b1, c, bc1, bc2);
    update(p.w2, g.w2, m.w2, v.w2, c, bc1, bc2);
    update(p.b2, g.b2, m.b2, v.b2, c, bc1, bc2);
  }
};

}  // namespace

double mlp_loss_and_grad(const MlpParams& p, const Matrix& X, const Matrix& Y, MlpParams* grad) {
  Matrix pre;
  const Matrix out = forward(p, X, &pre);
  const Matrix diff = out - Y;
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / denom;
  if (grad) {
    const Matrix dout = (2.0 / denom) * diff;
    const Matrix h = pre.cwiseMax(0.0);
    grad->w2 = dout.transpose() * h;
    grad->b2 = dout.colwise().sum().transpose();
    Matrix dz = dout * p.w2;
    dz.array() *= (pre.array() > 0.0).cast<double>();
    grad->w1 = dz.transpose() * X;
    grad->b1 = dz.colwise().sum().transpose();
  }
  return loss;
}

MlpProbe init_mlp(const Matrix& A, const Matrix& Y, const MlpConfig& config) {
  check_inputs(A, Y);
  const Standardizer st(A, Y);
  MlpProbe probe;
  probe.config = config;
  const MlpParams init = init_params(static_cast<std::size_t>(A.cols()), static_cast<std::size_t>(Y.cols()), config);
  probe.params = st.fold(init);
  probe.final_train_loss = mlp_loss_and_grad(init, st.x(A), st.y(Y), nullptr);
  return probe;
}

MlpProbe fit_mlp(const Matrix& A, const Matrix& Y, const MlpConfig& config) {
  check_inputs(A, Y);
  if (config.batch_size == 0) throw UsageError("MLP batch size must be positive");
  const auto n = static_cast<std::size_t>(A.rows());
  const Standardizer st(A, Y);
  const Matrix X = st.x(A);
  const Matrix T = st.y(Y);

  MlpProbe probe;
  probe.config = config;
  if (n < 2 * config.hidden_width) {
    probe.warnings.push_back("n=" + std::to_string(n) + " is below 2 x hidden width (" +
                             std::to_string(2 * config.hidden_width) + "); the MLP probe may overfit");
  }

  MlpParams p = init_params(static_cast<std::size_t>(A.cols()), static_cast<std::size_t>(Y.cols()), config);
  const std::size_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = config.steps > 0 ? config.steps : config.epochs * batches_per_epoch;

  // Shuffling draws from a stream separate from initialization.
  Rng rng(splitmix64(config.seed ^ 0x6d6c702d73687566ull));
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Adam adam(p);
  MlpParams grad;
  Matrix xb, yb;
  std::size_t cursor = n;
  for (std::size_t step = 0; step < total; ++step) {
    if (cursor >= n) {
      rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    const std::size_t len = std::min(config.batch_size, n - cursor);
    xb.resize(static_cast<Eigen::Index>(len), X.cols());
    yb.resize(static_cast<Eigen::Index>(len), T.cols());
    for (std::size_t i = 0; i < len; ++i) {
      xb.row(static_cast<Eigen::Index>(i)) = X.row(order[cursor + i]);
      yb.row(static_cast<Eigen::Index>(i)) = T.row(order[cursor + i]);
    }
    cursor += len;
    const double loss = mlp_loss_and_grad(p, xb, yb, &grad);
    if (!std::isfinite(loss)) throw NumericalError("MLP training diverged at step " + std::to_string(step));
    adam.step(p, grad, config);
  }
  probe.steps_taken = total;
  probe.final_train_loss = mlp_loss_and_grad(p, X, T, nullptr);
  if (!std::isfinite(probe.final_train_loss))
    throw NumericalError("MLP training diverged at step " + std::to_string(total));
  probe.params = st.fold(p);
  return probe;
}

Matrix predict(const MlpProbe& probe, const Matrix& A) {
  if (A.cols() != probe.params.w1.cols()) {
    throw DataError("MLP probe expects " + std::to_string(probe.params.w1.cols()) + " features, got " +
                    std::to_string(A.cols()));
  }
  return forward(probe.params, A, nullptr);
}

}  // namespace worldprobe
