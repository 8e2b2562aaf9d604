#pragma once

#include <Eigen/Dense>

namespace worldprobe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr const char* kToolkitVersion = "0.3.0";

}  // namespace worldprobe
