#include "silencio/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw DimensionError(fmt::format("tensor extents must be positive, got {}x{}", rows, cols));
  }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows == 0 || cols == 0) {
    throw DimensionError(fmt::format("tensor extents must be positive, got {}x{}", rows, cols));
  }
  if (values_.size() != rows * cols) {
    throw DimensionError(fmt::format("tensor {}x{} needs {} values, got {}", rows, cols,
                                     rows * cols, values_.size()));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > t.rows()) {
    throw DimensionError(fmt::format("row slice [{}, {}) out of range for {}", begin,
                                     begin + count, t.shape_string()));
  }
  const auto first = t.values().begin() + static_cast<std::ptrdiff_t>(begin * t.cols());
  return Tensor(count, t.cols(),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * t.cols())));
}

Tensor transpose(const Tensor& t) {
  Tensor out(t.cols(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(
        fmt::format("max_abs_diff: {} vs {}", a.shape_string(), b.shape_string()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace silencio
