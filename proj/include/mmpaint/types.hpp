// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mmpaint {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using VectorF = Vector<float>;
using MatrixD = Matrix<double>;

/// Binary spatial grid, true = active. Indexed (row, col) = (y, x).
using MaskGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Resolution {
  int height = 0;
  int width = 0;

  int cells() const { return height * width; }
  friend bool operator==(const Resolution&, const Resolution&) = default;
  friend auto operator<=>(const Resolution&, const Resolution&) = default;
};

inline std::string to_string(const Resolution& r) {
  return std::to_string(r.height) + "x" + std::to_string(r.width);
}

/// Pixel bounding box, half-open: covers x0 <= x < x1, y0 <= y < y1.
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool well_formed() const { return x1 > x0 && y1 > y0; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Raised when an input violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mmpaint
