#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mts2s/errors.hpp"

namespace mts2s {

// Dense row-major array. No broadcasting: every shape alignment is explicit,
// and mismatches throw DimensionError naming both shapes.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), S(0));
  }

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; rank is checked by the caller via require_matrix().
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }
  S& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(S v) { data_.assign(data_.size(), v); }
  void zero() { fill(S(0)); }

  bool all_finite() const {
    for (S v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << 'x';
      os << shape_[i];
    }
    os << ']';
    return os.str();
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

template <typename S>
void require_matrix(const Tensor<S>& w, std::size_t rows, std::size_t cols, const char* op) {
  if (w.shape().size() != 2 || w.shape()[0] != rows || w.shape()[1] != cols) {
    Tensor<S> want({rows, cols});
    throw DimensionError(std::string(op) + ": expected matrix " + want.shape_string() + ", got " +
                         w.shape_string());
  }
}

}  // namespace detail

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// y = W x  (W: [m x n], x: [n]); set accumulate to add into y.
template <typename S>
void matvec(const Tensor<S>& w, const Tensor<S>& x, Tensor<S>& y, bool accumulate = false) {
  if (w.shape().size() != 2 || w.shape()[1] != x.size()) {
    throw DimensionError("matvec: " + w.shape_string() + " does not apply to " + x.shape_string());
  }
  const std::size_t m = w.rows(), n = w.cols();
  if (!accumulate) {
    if (y.size() != m) y = Tensor<S>({m});
    y.zero();
  }
  const S* wp = w.data();
  const S* xp = x.data();
  S* yp = y.data();
  for (std::size_t r = 0; r < m; ++r) {
    S acc = 0;
    const S* row = wp + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * xp[c];
    yp[r] += acc;
  }
}

// dx += W^T dy
template <typename S>
void matvec_transpose_accum(const Tensor<S>& w, const Tensor<S>& dy, Tensor<S>& dx) {
  const std::size_t m = w.rows(), n = w.cols();
  if (dy.size() != m || dx.size() != n) {
    throw DimensionError("matvec_transpose_accum: " + w.shape_string() + " with dy " +
                         dy.shape_string() + ", dx " + dx.shape_string());
  }
  const S* wp = w.data();
  const S* dyp = dy.data();
  S* dxp = dx.data();
  for (std::size_t r = 0; r < m; ++r) {
    const S g = dyp[r];
    if (g == S(0)) continue;
    const S* row = wp + r * n;
    for (std::size_t c = 0; c < n; ++c) dxp[c] += g * row[c];
  }
}

// dW += dy x^T
template <typename S>
void outer_accum(const Tensor<S>& dy, const Tensor<S>& x, Tensor<S>& dw) {
  const std::size_t m = dy.size(), n = x.size();
  if (dw.rows() != m || dw.cols() != n) {
    throw DimensionError("outer_accum: dW " + dw.shape_string() + " for dy " + dy.shape_string() +
                         ", x " + x.shape_string());
  }
  const S* dyp = dy.data();
  const S* xp = x.data();
  S* dwp = dw.data();
  for (std::size_t r = 0; r < m; ++r) {
    const S g = dyp[r];
    if (g == S(0)) continue;
    S* row = dwp + r * n;
    for (std::size_t c = 0; c < n; ++c) row[c] += g * xp[c];
  }
}

// W x + b
template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::require_matrix(w, b.size(), x.size(), "affine");
  Tensor<S> y({b.size()});
  matvec(w, x, y);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

// Accumulates dW, db and dx for y = W x + b given dy.
template <typename S>
void affine_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, Tensor<S>& dw,
                     Tensor<S>& db, Tensor<S>& dx) {
  detail::require_matrix(w, dy.size(), x.size(), "affine_backward");
  detail::require_same_shape(dw, w, "affine_backward dW");
  outer_accum(dy, x, dw);
  for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
  matvec_transpose_accum(w, dy, dx);
}

// Max-subtracted softmax; empty input is a domain error.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.empty()) throw DomainError("softmax: empty input");
  Tensor<S> y(x.shape());
  S mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
  S sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= sum;
  return y;
}

// dx for y = softmax(x): dx = y ⊙ (dy − <y, dy>)
template <typename S>
Tensor<S> softmax_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  detail::require_same_shape(y, dy, "softmax_backward");
  S dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  Tensor<S> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
  return dx;
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  if (x.empty()) throw DomainError("log_softmax: empty input");
  Tensor<S> y(x.shape());
  S mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
  S sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::exp(x[i] - mx);
  const S lse = mx + std::log(sum);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return y;
}

template <typename S>
S l2_distance_sq(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "l2_distance_sq");
  S acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const S d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace mts2s
