#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scr {

using RealVector = std::vector<double>;
using ClassIndex = std::size_t;

/// Dense row-major matrix of doubles. Rows are samples, columns are classes
/// (or feature dimensions).
class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
      throw std::invalid_argument("RealMatrix: dimensions must be positive");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const RealMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const RealMatrix&, const RealMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Logistic function evaluated on the branch that cannot overflow. Results are
/// clamped to the open interval (0, 1); beyond |x| ~ 37 double rounding would
/// otherwise return exactly 1 (or underflow to 0).
inline double stable_sigmoid(double x) noexcept {
  constexpr double kBelowOne = 1.0 - 0x1p-53;
  if (x >= 0.0) {
    return std::min(1.0 / (1.0 + std::exp(-x)), kBelowOne);
  }
  const double e = std::exp(x);
  return std::max(e / (1.0 + e), std::numeric_limits<double>::denorm_min());
}

/// log(softmax(v)) computed after shifting by max(v).
inline RealVector log_softmax_row(std::span<const double> v) {
  if (v.empty()) {
    throw std::invalid_argument("empty logits");
  }
  double peak = v[0];
  for (double x : v) peak = std::max(peak, x);
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  const double log_total = std::log(total);
  RealVector out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = (v[j] - peak) - log_total;
  return out;
}

inline RealVector softmax_row(std::span<const double> v) {
  RealVector out = log_softmax_row(v);
  for (double& x : out) x = std::exp(x);
  return out;
}

/// Scales a nonnegative vector to sum to one.
inline RealVector normalize_positive(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) {
      throw std::invalid_argument("normalize_positive: negative or NaN entry");
    }
    total += x;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("degenerate distribution");
  }
  RealVector out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] / total;
  return out;
}

/// Central-difference gradient of `f` at `x`. Used as the reference for every
/// analytic gradient in the test suites and in `scr gradcheck`.
inline RealVector finite_diff_gradient(const std::function<double(const RealVector&)>& f,
                                       RealVector x, double h) {
  if (!(h > 0.0)) {
    throw std::invalid_argument("finite_diff_gradient: step must be positive");
  }
  RealVector grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + h;
    const double up = f(x);
    x[k] = saved - h;
    const double down = f(x);
    x[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// |a - n| / max(|a|, |n|, abs_floor): relative disagreement, measured
/// against `abs_floor` when both derivatives are near zero.
inline double gradient_rel_error(double analytic, double numeric, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

inline bool all_finite(std::span<const double> v) noexcept {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace scr
