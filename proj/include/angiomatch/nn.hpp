#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace angiomatch::nn {

// exact GELU: x * Phi(x)
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return phi + x * pdf;
}

inline Eigen::MatrixXd gelu(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

inline Eigen::MatrixXd gelu_grad(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu_grad(v); });
}

inline double sigmoid(double x) {
  return (x >= 0.0) ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 - sigmoid(x)) = -softplus(x), stable for large |x|
inline double log_one_minus_sigmoid(double x) {
  return (x > 0.0) ? -x - std::log1p(std::exp(-x)) : -std::log1p(std::exp(x));
}

// log(sigmoid(x)) = -softplus(-x)
inline double log_sigmoid(double x) {
  return (x > 0.0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Row-wise softmax, numerically shifted.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (long i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

// Row-wise log-softmax.
inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (long i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - m;
    const double lse = std::log(shifted.exp().sum());
    out.row(i) = (shifted - lse).matrix();
  }
  return out;
}

// Backward through a row-wise softmax: given y = softmax(a) and dL/dy,
// dL/da_i = y_i * (dy_i - sum_j dy_j y_j).
inline Eigen::MatrixXd softmax_rows_backward(const Eigen::MatrixXd& y,
                                             const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd da(y.rows(), y.cols());
  for (long i = 0; i < y.rows(); ++i) {
    const double dot = dy.row(i).dot(y.row(i));
    da.row(i) = y.row(i).cwiseProduct(dy.row(i).array().matrix() -
                                      Eigen::RowVectorXd::Constant(y.cols(), dot));
  }
  return da;
}

// Rows scaled to unit norm; rows with tiny norm are left at zero. Returns the
// pre-normalization norms for the backward pass.
inline Eigen::VectorXd normalize_rows(Eigen::MatrixXd& x, double eps = 1e-12) {
  Eigen::VectorXd norms(x.rows());
  for (long i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    norms(i) = n;
    if (n > eps)
      x.row(i) /= n;
    else
      x.row(i).setZero();
  }
  return norms;
}

}  // namespace angiomatch::nn
