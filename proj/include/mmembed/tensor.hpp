// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and the handful of vector kernels the model is
// built from. Every forward kernel that takes part in training has a paired
// backward kernel that accumulates into caller-owned gradient buffers.
#ifndef MMEMBED_TENSOR_HPP_
#define MMEMBED_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmembed/errors.hpp"

namespace mmembed {

template <class Real>
class Matrix {
 public:
  using value_type = Real;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

namespace detail {

inline void require_shape(bool ok, const char* op, std::size_t got, std::size_t want) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": dimension " + std::to_string(got) +
                     " does not match " + std::to_string(want));
  }
}

}  // namespace detail

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  detail::require_shape(a.size() == b.size(), "dot", a.size(), b.size());
  Real s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class Real>
Real l2_norm(std::span<const Real> a) {
  Real s{0};
  for (Real v : a) s += v * v;
  return std::sqrt(s);
}

/// y += alpha * x
template <class Real>
void axpy(Real alpha, std::span<const Real> x, std::span<Real> y) {
  detail::require_shape(x.size() == y.size(), "axpy", x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <class Real>
std::vector<Real> concat(std::span<const Real> a, std::span<const Real> b) {
  std::vector<Real> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <class Real>
bool all_finite(std::span<const Real> v) {
  return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(x); });
}

/// out = W x + b. An empty bias means no bias.
template <class Real>
void affine_forward_into(const Matrix<Real>& W, std::span<const Real> x,
                         std::span<const Real> b, std::span<Real> out) {
  detail::require_shape(W.cols() == x.size(), "affine_forward", x.size(), W.cols());
  detail::require_shape(b.empty() || W.rows() == b.size(), "affine_forward", b.size(), W.rows());
  detail::require_shape(W.rows() == out.size(), "affine_forward", out.size(), W.rows());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const Real* w = W.row(r).data();
    Real s = b.empty() ? Real{0} : b[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
    out[r] = s;
  }
}

template <class Real>
std::vector<Real> affine_forward(const Matrix<Real>& W, std::span<const Real> x,
                                 std::span<const Real> b) {
  std::vector<Real> out(W.rows());
  affine_forward_into<Real>(W, x, b, out);
  return out;
}

/// Backward of y = W x + b given dy. Accumulates dW += dy x^T, db += dy and
/// dx += W^T dy. Any of db / dx may be empty to skip it.
template <class Real>
void affine_backward(const Matrix<Real>& W, std::span<const Real> x, std::span<const Real> dy,
                     Matrix<Real>& dW, std::span<Real> db, std::span<Real> dx) {
  detail::require_shape(dy.size() == W.rows(), "affine_backward", dy.size(), W.rows());
  detail::require_shape(x.size() == W.cols(), "affine_backward", x.size(), W.cols());
  detail::require_shape(dW.rows() == W.rows() && dW.cols() == W.cols(), "affine_backward",
                        dW.size(), W.size());
  detail::require_shape(dx.empty() || dx.size() == x.size(), "affine_backward", dx.size(),
                        x.size());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const Real g = dy[r];
    if (g == Real{0}) continue;
    Real* dw = dW.row(r).data();
    for (std::size_t c = 0; c < x.size(); ++c) dw[c] += g * x[c];
    if (!db.empty()) db[r] += g;
    if (!dx.empty()) {
      const Real* w = W.row(r).data();
      for (std::size_t c = 0; c < x.size(); ++c) dx[c] += g * w[c];
    }
  }
}

/// dx += W^T dy, without touching weight gradients.
template <class Real>
void affine_backward_input(const Matrix<Real>& W, std::span<const Real> dy, std::span<Real> dx) {
  detail::require_shape(dy.size() == W.rows(), "affine_backward_input", dy.size(), W.rows());
  detail::require_shape(dx.size() == W.cols(), "affine_backward_input", dx.size(), W.cols());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const Real g = dy[r];
    const Real* w = W.row(r).data();
    for (std::size_t c = 0; c < dx.size(); ++c) dx[c] += g * w[c];
  }
}

enum class ElementwiseOp { sigmoid, tanh, relu, mul };

template <class Real>
Real sigmoid(Real x) {
  // Split by sign so exp never overflows.
  if (x >= Real{0}) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

template <class Real>
Real relu(Real x) {
  return x > Real{0} ? x : Real{0};
}

template <class Real>
std::vector<Real> elementwise(ElementwiseOp op, std::span<const Real> a,
                              std::span<const Real> b = {}) {
  std::vector<Real> out(a.size());
  switch (op) {
    case ElementwiseOp::sigmoid:
      std::transform(a.begin(), a.end(), out.begin(), sigmoid<Real>);
      break;
    case ElementwiseOp::tanh:
      std::transform(a.begin(), a.end(), out.begin(), [](Real x) { return std::tanh(x); });
      break;
    case ElementwiseOp::relu:
      std::transform(a.begin(), a.end(), out.begin(), relu<Real>);
      break;
    case ElementwiseOp::mul:
      detail::require_shape(a.size() == b.size(), "elementwise mul", b.size(), a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

/// Gradient of an activation expressed through its output y:
/// returns dy * f'(x) for sigmoid, tanh and relu.
template <class Real>
std::vector<Real> activation_backward(ElementwiseOp op, std::span<const Real> y,
                                      std::span<const Real> dy) {
  detail::require_shape(y.size() == dy.size(), "activation_backward", dy.size(), y.size());
  std::vector<Real> dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    switch (op) {
      case ElementwiseOp::sigmoid: dx[i] = dy[i] * y[i] * (Real{1} - y[i]); break;
      case ElementwiseOp::tanh: dx[i] = dy[i] * (Real{1} - y[i] * y[i]); break;
      case ElementwiseOp::relu: dx[i] = y[i] > Real{0} ? dy[i] : Real{0}; break;
      case ElementwiseOp::mul:
        throw ContractViolation("activation_backward: mul is not an activation");
    }
  }
  return dx;
}

}  // namespace mmembed

#endif  // MMEMBED_TENSOR_HPP_
