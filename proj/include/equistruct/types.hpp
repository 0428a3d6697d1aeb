#pragma once

#include <Eigen/Dense>

namespace equistruct {

using Matrix = Eigen::MatrixXd;
/// Row-major matrix; batched activations use this so one sample's features
/// stay contiguous.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::MatrixXi;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

}  // namespace equistruct
