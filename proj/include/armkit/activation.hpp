#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "armkit/error.hpp"
#include "armkit/tensor.hpp"

namespace armkit {

enum class Activation { silu, gelu };

inline std::string_view to_string(Activation a) { return a == Activation::silu ? "silu" : "gelu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "silu") return Activation::silu;
  if (s == "gelu") return Activation::gelu;
  throw ValueError("unknown activation '" + std::string(s) + "' (expected silu or gelu)");
}

namespace detail {
// tanh approximation of GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}
}  // namespace detail

template <typename T>
T activate(T x, Activation kind) {
  if (kind == Activation::silu) return x * detail::sigmoid(x);
  const T a = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T b = static_cast<T>(detail::kGeluCubic);
  return T{0.5} * x * (T{1} + std::tanh(a * (x + b * x * x * x)));
}

// First derivative of the activation.
template <typename T>
T activate_d1(T x, Activation kind) {
  if (kind == Activation::silu) {
    const T s = detail::sigmoid(x);
    return s + x * s * (T{1} - s);
  }
  const T a = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T b = static_cast<T>(detail::kGeluCubic);
  const T t = std::tanh(a * (x + b * x * x * x));
  const T du = a * (T{1} + T{3} * b * x * x);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * du;
}

// Second derivative of the activation.
template <typename T>
T activate_d2(T x, Activation kind) {
  if (kind == Activation::silu) {
    const T s = detail::sigmoid(x);
    return s * (T{1} - s) * (T{2} + x * (T{1} - T{2} * s));
  }
  const T a = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T b = static_cast<T>(detail::kGeluCubic);
  const T t = std::tanh(a * (x + b * x * x * x));
  const T du = a * (T{1} + T{3} * b * x * x);
  const T d2u = T{6} * a * b * x;
  return (T{1} - t * t) * (du + T{0.5} * x * (d2u - T{2} * t * du * du));
}

template <typename T>
BasicTensor<T> activation_fn(const BasicTensor<T>& x, Activation kind) {
  BasicTensor<T> out = x;
  for (auto& v : out.data()) v = activate(v, kind);
  ensure_finite(out, "activation_fn");
  return out;
}

}  // namespace armkit
