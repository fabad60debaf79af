#pragma once

#include <Eigen/Dense>

namespace imdet {

/// Row-major dense matrix used for every parameter and activation.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected layer: y = W x + b, weight [out, in], bias [out, 1].
struct Dense {
  Mat weight;
  Mat bias;
};

}  // namespace imdet
