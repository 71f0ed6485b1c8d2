#pragma once

// Dense matrix/vector types and the handful of operations the rest of the
// library needs. Storage is Eigen; all arithmetic is double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "drl/error.hpp"
#include "drl/rng.hpp"

namespace drl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

// Entries i.i.d. N(0, variance), filled in row-major order from one stream.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double variance,
                              SeedSpec seed) {
  detail::require(rows >= 1 && cols >= 1, "gaussian_matrix: dimensions must be >= 1");
  detail::require(variance > 0.0 && std::isfinite(variance),
                  "gaussian_matrix: variance must be positive and finite");
  Stream stream(seed);
  const double scale = std::sqrt(variance);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  double* data = m.data();
  const std::size_t count = rows * cols;
  for (std::size_t i = 0; i < count; ++i) data[i] = scale * stream.normal();
  return m;
}

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw InvalidArgument("matvec: matrix has " + std::to_string(m.cols()) +
                          " columns but vector has length " + std::to_string(v.size()));
  }
  return m * v;
}

// Cosine similarity, clamped to [-1, 1].
inline double cosine(const Vector& x, const Vector& y) {
  detail::require(x.size() == y.size(), "cosine: length mismatch");
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) throw InvalidArgument("cosine: zero vector");
  return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

}  // namespace drl
