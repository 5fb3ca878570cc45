#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace meir {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return rows == 0; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace meir
