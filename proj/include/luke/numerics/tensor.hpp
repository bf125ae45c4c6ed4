// Dense row-major tensors and the raw kernels the autodiff ops are built on.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace luke {

// Base for input/contract violations. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MaskedRowError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// When set, every op output is scanned for NaN/Inf. Off by default.
inline bool& check_finite_mode() {
  static bool enabled = false;
  return enabled;
}

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) +
                           " values, got " + std::to_string(data_.size()));
    }
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view: the last axis is the column axis, everything before it is
  // flattened into rows. A rank-0 tensor is 1x1.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const {
    std::size_t c = cols();
    return c == 0 ? 0 : data_.size() / c;
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  T item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

namespace kernels {

// c[m x n] (+)= a[m x k] * b[k x n]. Each output element is summed over k in
// ascending order regardless of m and n, so results do not depend on how many
// rows are batched together.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  // Four output rows share each pass over a row of b. Every c[i][j] still sums
  // its k products in ascending p order.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  }
  return out;
}

}  // namespace kernels

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(a.shape()));
  return Tensor<T>({a.dim(1), a.dim(0)},
                   kernels::transpose(a.data().data(), a.dim(0), a.dim(1)));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  kernels::gemm(a.data().data(), b.data().data(), out.data().data(), a.dim(0),
                a.dim(1), b.dim(1), false);
  return out;
}

// Numerically stable softmax along `axis` of a tensor of any rank. A slice that
// is entirely -inf has no defined distribution and raises MaskedRowError.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      auto at = [&](std::size_t j) { return (o * len + j) * inner + in; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[at(j)]);
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw MaskedRowError("softmax over a fully masked slice");
      }
      T total{0};
      for (std::size_t j = 0; j < len; ++j) {
        y[at(j)] = std::exp(x[at(j)] - mx);
        total += y[at(j)];
      }
      for (std::size_t j = 0; j < len; ++j) y[at(j)] /= total;
    }
  }
  return y;
}

}  // namespace luke
