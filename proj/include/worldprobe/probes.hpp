#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "worldprobe/types.hpp"

namespace worldprobe {

struct ProbeMetadata {
  std::string model_id;
  std::int32_t layer = -1;
  std::string prompt_id;
  std::string split;
};

// Linear map from activation space to target space, fitted on centered data:
//   yhat = (x - feature_mean) * weights + target_mean
struct ProbeModel {
  Matrix weights;       // d x t
  Vector intercept;     // t; equals target_mean - feature_mean * weights
  double lambda = 0.0;
  Vector feature_mean;  // d
  Vector target_mean;   // t
  bool standardized = false;  // weights already folded with 1 / feature_scale
  Vector feature_scale;       // d; all ones unless standardized
  ProbeMetadata meta;

  std::size_t input_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weights.cols()); }
};

struct RidgeOptions {
  // Divide each feature by its training standard deviation before fitting.
  // Off by default: residual stream norms carry information.
  bool standardize = false;
};

// Closed-form ridge on training-mean-centered data.
ProbeModel fit_ridge(const Matrix& A, const Matrix& Y, double lambda, const RidgeOptions& opts = {});

Matrix predict(const ProbeModel& probe, const Matrix& A);

struct LoocvCurve {
  std::vector<double> lambdas;  // ascending
  std::vector<double> press;    // mean over rows of the squared LOO residual, summed over targets
  std::size_t chosen = 0;

  double chosen_lambda() const { return lambdas.at(chosen); }
  std::string to_csv() const;
};

// 17 points log-spaced over [1e-2, 1e6].
std::vector<double> default_lambda_grid();

LoocvCurve tune_lambda_loocv(const Matrix& A, const Matrix& Y, const std::vector<double>& grid,
                             const RidgeOptions& opts = {});

struct RidgeCvFit {
  ProbeModel probe;
  LoocvCurve curve;
};

// Tune lambda over `grid` and refit at the chosen value, sharing one SVD.
RidgeCvFit fit_ridge_cv(const Matrix& A, const Matrix& Y, const std::vector<double>& grid,
                        const RidgeOptions& opts = {});

// Centered-SVD ridge solver; one factorization serves every lambda.
class RidgeSolver {
 public:
  RidgeSolver(const Matrix& A, const Matrix& Y, const RidgeOptions& opts = {});

  ProbeModel solve(double lambda) const;
  // Exact leave-one-out residuals (n x t) at `lambda`.
  Matrix loo_residuals(double lambda) const;
  double press(double lambda) const;

  std::size_t rows() const { return n_; }
  std::size_t cols() const { return d_; }
  std::size_t rank() const { return rank_; }

 private:
  void check_lambda(double lambda) const;

  std::size_t n_ = 0, d_ = 0, rank_ = 0;
  RidgeOptions opts_;
  Vector feature_mean_, feature_scale_, target_mean_;
  Matrix U_, V_;  // thin factors of the centered design
  Vector s_;
  Matrix UtY_;    // U^T Y_c
  Matrix Yc_;
  double y_scale_ = 0.0;  // mean raw squared target, for tie tolerance
  friend LoocvCurve tune_lambda_loocv(const Matrix&, const Matrix&, const std::vector<double>&,
                                      const RidgeOptions&);
  friend RidgeCvFit fit_ridge_cv(const Matrix&, const Matrix&, const std::vector<double>&,
                                 const RidgeOptions&);
  LoocvCurve curve(const std::vector<double>& grid) const;
};

// PRBE container: "PRBE", u32 version, fields as f64.
std::string encode_probe(const ProbeModel& p);
ProbeModel decode_probe(std::string_view bytes, const std::string& source = "<buffer>");
void save_probe(const std::string& path, const ProbeModel& p);
ProbeModel load_probe(const std::string& path);

// ---------------------------------------------------------------------------
// PCA

struct PcaProjector {
  std::size_t k = 0;
  Matrix components;          // k x d, orthonormal rows
  Vector mean;                // d
  Vector explained_variance;  // k, non-increasing
};

PcaProjector fit_pca(const Matrix& A, std::size_t k);
Matrix project(const PcaProjector& proj, const Matrix& A);

// ---------------------------------------------------------------------------
// One-hidden-layer MLP probe: W2 * relu(W1 x + b1) + b2

struct MlpConfig {
  std::size_t hidden_width = 256;
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  // When nonzero, overrides epochs.
  std::size_t steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct MlpParams {
  Matrix w1;  // h x d
  Vector b1;  // h
  Matrix w2;  // t x h
  Vector b2;  // t
};

struct MlpProbe {
  MlpParams params;  // raw input/output units
  MlpConfig config;
  std::size_t steps_taken = 0;
  double final_train_loss = 0.0;  // MSE in standardized target units
  std::vector<std::string> warnings;
};

// Deterministic initialization for `config.seed`, expressed in raw units for
// the given training data (the same data fit_mlp would standardize with).
MlpProbe init_mlp(const Matrix& A, const Matrix& Y, const MlpConfig& config);
// Mini-batch Adam on mean squared error. Inputs and targets are standardized
// internally and the scaling is folded back into the returned weights.
MlpProbe fit_mlp(const Matrix& A, const Matrix& Y, const MlpConfig& config);
Matrix predict(const MlpProbe& probe, const Matrix& A);

// Loss 0.5-free MSE (mean over rows and outputs) and its gradient; exposed
// for gradient checking.
double mlp_loss_and_grad(const MlpParams& p, const Matrix& X, const Matrix& Y, MlpParams* grad);

}  // namespace worldprobe
