#pragma once

#include <Eigen/Dense>

#include "dgp/errors.hpp"

namespace dgp {

// Regression data: rows of X are inputs x̃, rows of Y the observed residual
// targets (one column per output dimension).
struct Dataset {
  Eigen::MatrixXd X;  // N×d
  Eigen::MatrixXd Y;  // N×p

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }
  Eigen::Index output_dim() const { return Y.cols(); }

  void validate() const {
    if (X.rows() != Y.rows()) {
      throw invalid_argument_error("Dataset: X and Y row counts differ");
    }
    if (!X.allFinite() || !Y.allFinite()) {
      throw invalid_argument_error("Dataset: non-finite entries");
    }
  }
};

}  // namespace dgp
