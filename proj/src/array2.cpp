#include "gleamcast/array2.hpp"

#include <algorithm>
#include <cmath>

#include "gleamcast/errors.hpp"

namespace gleamcast {

Array2::Array2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw DimensionError("Array2: data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
}

Array2::Array2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Array2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Array2 Array2::identity(std::size_t n) {
  Array2 out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

void Array2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Array2 Array2::transposed() const {
  Array2 out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

bool Array2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Array2::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Array2 matmul(const Array2& a, const Array2& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.shape_string() + " * " + b.shape_string());
  Array2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

double canonical_sum(std::span<const double> values) {
  thread_local std::vector<double> scratch;
  scratch.assign(values.begin(), values.end());
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double v : scratch) s += v;
  return s;
}

}  // namespace gleamcast
