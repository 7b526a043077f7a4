#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "foa/error.hpp"

namespace foa {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::ShapeMismatch,
            "matrix data length does not equal rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// out = W * x for W of shape (out.size() x x.size()) stored row-major.
inline void matvec(std::span<const double> w, std::span<const double> x, std::span<double> out) {
  assert(w.size() == out.size() * x.size());
  const std::size_t n = x.size();
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(w.subspan(r * n, n), x);
}

/// out += W^T * y for W of shape (y.size() x out.size()).
inline void matvec_t_acc(std::span<const double> w, std::span<const double> y,
                         std::span<double> out) {
  assert(w.size() == y.size() * out.size());
  const std::size_t n = out.size();
  for (std::size_t r = 0; r < y.size(); ++r) axpy(y[r], w.subspan(r * n, n), out);
}

/// Cosine similarity clamped to [-1, 1]. Throws ZeroNorm when either norm is below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size() && !u.empty(), ErrorCode::ShapeMismatch,
          "cosine needs equal, nonzero lengths");
  const double nu = norm2(u);
  const double nv = norm2(v);
  require(nu >= 1e-12 && nv >= 1e-12, ErrorCode::ZeroNorm, "cosine of a zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Softmax of v / temperature, computed with max subtraction.
inline Vector softmax(std::span<const double> v, double temperature) {
  require(temperature > 0.0, ErrorCode::NonPositiveTemperature, "softmax temperature must be > 0");
  Vector out(v.size());
  if (v.empty()) return out;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

}  // namespace foa
