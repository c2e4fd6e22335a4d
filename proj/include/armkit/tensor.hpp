#pragma once

// Dense row-major tensors and the deterministic kernels built on them.
//
// Every reduction accumulates in ascending index order, so results are
// bit-reproducible for identical inputs. Kernels reject non-finite output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "armkit/error.hpp"

namespace armkit {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols,
                            std::initializer_list<T> values) {
    return BasicTensor({rows, cols}, std::vector<T>(values));
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor({values.size()}, std::vector<T>(values));
  }

  static BasicTensor identity(std::size_t n) {
    BasicTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * shape_[1], shape_[1]); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return BasicTensor<To>(t.shape(), std::move(out));
}

template <typename T>
void ensure_finite(std::span<const T> values, const char* where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValueError(std::string(where) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
void ensure_finite(const BasicTensor<T>& t, const char* where) {
  ensure_finite<T>(t.data(), where);
}

namespace detail {
template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}
}  // namespace detail

// out[i, j] = sum_k a[i, k] * b[k, j], accumulated with k ascending.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  BasicTensor<T> out({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = po + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      const T* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  BasicTensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// Row-wise softmax with max subtraction. With `causal`, query row i may attend
// to key columns j <= i + (n - m), i.e. the query block is aligned to the end
// of the key sequence; masked entries are exactly 0.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits, bool causal) {
  detail::require_rank(logits, 2, "softmax_rows");
  ensure_finite(logits, "softmax_rows input");
  const std::size_t m = logits.rows(), n = logits.cols();
  const auto offset = static_cast<std::ptrdiff_t>(n) - static_cast<std::ptrdiff_t>(m);
  BasicTensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t limit = n;
    if (causal) {
      const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(i) + offset;
      if (last < 0) throw ValueError("softmax_rows: row " + std::to_string(i) + " is fully masked");
      limit = static_cast<std::size_t>(last) + 1;
    }
    auto in = logits.row(i);
    auto o = out.row(i);
    T mx = in[0];
    for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, in[j]);
    // wide accumulator keeps each row's total mass within an ulp of 1
    using Acc = std::conditional_t<std::is_same_v<T, float>, double, T>;
    Acc sum = 0;
    for (std::size_t j = 0; j < limit; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < limit; ++j) o[j] = static_cast<T>(o[j] / sum);
  }
  return out;
}

// y_i = gamma_i * x_i / sqrt(mean(x^2) + eps). A zero input with eps == 0 maps to zero.
template <typename T>
void rmsnorm_into(std::span<const T> x, std::span<const T> gamma, T eps, std::span<T> y) {
  if (x.empty()) throw ShapeError("rmsnorm: empty input");
  if (gamma.size() != x.size() || y.size() != x.size()) {
    throw ShapeError("rmsnorm: gamma/output length " + std::to_string(gamma.size()) +
                     " does not match input length " + std::to_string(x.size()));
  }
  if (!(eps >= T{0})) throw ValueError("rmsnorm: eps must be non-negative");
  T ss = 0;
  for (auto v : x) ss += v * v;
  const T denom = std::sqrt(ss / static_cast<T>(x.size()) + eps);
  if (denom == T{0}) {
    std::fill(y.begin(), y.end(), T{0});
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gamma[i] * (x[i] / denom);
}

template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, T eps) {
  detail::require_rank(x, 1, "rmsnorm");
  BasicTensor<T> y(x.shape());
  rmsnorm_into<T>(x.data(), gamma.data(), eps, y.data());
  ensure_finite(y, "rmsnorm");
  return y;
}

// Applies rmsnorm independently to each row of a [S, d] tensor.
template <typename T>
BasicTensor<T> rmsnorm_rows(const BasicTensor<T>& x, const BasicTensor<T>& gamma, T eps) {
  detail::require_rank(x, 2, "rmsnorm_rows");
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) rmsnorm_into<T>(x.row(r), gamma.data(), eps, y.row(r));
  ensure_finite(y, "rmsnorm_rows");
  return y;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  ensure_finite(out, "add");
  return out;
}

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hadamard: shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  ensure_finite(out, "hadamard");
  return out;
}

// Columns [begin, begin + count) of a matrix.
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_rank(a, 2, "slice_cols");
  if (begin + count > a.cols() || count == 0) throw ShapeError("slice_cols: range out of bounds");
  BasicTensor<T> out({a.rows(), count});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

}  // namespace armkit
