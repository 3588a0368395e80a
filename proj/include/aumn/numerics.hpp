#pragma once

#include <cmath>
#include <string>

#include "aumn/types.hpp"

// Minimal dense kernel layer shared by every module: checked products,
// elementwise activations, stable row softmax, norms. All functions are pure;
// inputs are never modified.

namespace aumn {

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul: dimension mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
  return a * b;
}

inline Real sigmoid_scalar(Real x) {
  // Split on sign so exp never overflows.
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Derived>
Matrix sigmoid(const Eigen::MatrixBase<Derived>& a) {
  return a.unaryExpr([](Real x) { return sigmoid_scalar(x); });
}

template <typename Derived>
Matrix relu(const Eigen::MatrixBase<Derived>& a) {
  return a.cwiseMax(Real(0));
}

// Row-wise softmax with max subtraction. Rows of the result sum to 1.
template <typename Derived>
Matrix softmax_rows(const Eigen::MatrixBase<Derived>& a) {
  Matrix out = a;
  for (Index i = 0; i < out.rows(); ++i) {
    const Real m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Vector softmax(const Vector& v) {
  const Real m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

inline Real frobenius_norm(const Matrix& a) { return a.norm(); }
inline Real l1_norm(const Vector& v) { return v.lpNorm<1>(); }
inline Real l2_norm(const Vector& v) { return v.norm(); }

}  // namespace aumn
