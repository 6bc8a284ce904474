#pragma once

#include <Eigen/Dense>

#include "smallarea/error.hpp"

namespace smallarea::linalg {

/// Least-squares coefficients of y on the columns of X via column-pivoting
/// QR. Raises RankDeficient when X does not have full column rank.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "design rows differ from response length");
  if (x.rows() <= x.cols())
    throw Error(ErrorCode::InsufficientData, "need more observations than regressors");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) throw Error(ErrorCode::RankDeficient, "design matrix is singular");
  return qr.solve(y);
}

/// X with a leading column of ones.
inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& regressors) {
  Eigen::MatrixXd x(regressors.rows(), regressors.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(regressors.cols()) = regressors;
  return x;
}

}  // namespace smallarea::linalg
