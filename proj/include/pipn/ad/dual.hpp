#pragma once

// Second-order forward-mode numbers. A Dual2 carries a value together with
// the first and second derivative along one fixed direction, so a single
// pass through f gives f(x), D_v f(x) and D_v^2 f(x).

#include <cmath>
#include <concepts>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pipn/errors.hpp"

namespace pipn::ad {

template <class T>
struct Dual2 {
  T value{};
  T d1{};
  T d2{};

  constexpr Dual2() = default;
  constexpr Dual2(T v) : value(v) {}  // NOLINT: constants embed implicitly
  constexpr Dual2(T v, T g, T h) : value(std::move(v)), d1(std::move(g)), d2(std::move(h)) {}

  template <class S>
    requires(std::is_arithmetic_v<S> && !std::is_same_v<S, T>)
  constexpr Dual2(S v) : value(T(v)) {}  // NOLINT

  Dual2& operator+=(const Dual2& o) { return *this = *this + o; }
  Dual2& operator-=(const Dual2& o) { return *this = *this - o; }
  Dual2& operator*=(const Dual2& o) { return *this = *this * o; }
  Dual2& operator/=(const Dual2& o) { return *this = *this / o; }
};

template <class T>
struct is_dual2 : std::false_type {};
template <class T>
struct is_dual2<Dual2<T>> : std::true_type {};

/// Innermost real value of a possibly nested Dual2.
template <class T>
double primal(const T& x) {
  if constexpr (is_dual2<T>::value) {
    return primal(x.value);
  } else {
    return static_cast<double>(x);
  }
}

/// Chain rule for h = g(f): h'' = g''(f) f'^2 + g'(f) f''.
template <class T>
Dual2<T> compose(const Dual2<T>& f, T g0, T g1, T g2) {
  return {std::move(g0), g1 * f.d1, g2 * f.d1 * f.d1 + g1 * f.d2};
}

template <class T>
Dual2<T> operator+(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.value + b.value, a.d1 + b.d1, a.d2 + b.d2};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.value - b.value, a.d1 - b.d1, a.d2 - b.d2};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a) {
  return {-a.value, -a.d1, -a.d2};
}
template <class T>
Dual2<T> operator*(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.value * b.value, a.d1 * b.value + a.value * b.d1,
          a.d2 * b.value + T(2.0) * a.d1 * b.d1 + a.value * b.d2};
}
template <class T>
Dual2<T> operator/(const Dual2<T>& a, const Dual2<T>& b) {
  if (primal(b.value) == 0.0) {
    throw DomainError("division by zero during derivative propagation");
  }
  T q = a.value / b.value;
  T q1 = (a.d1 - q * b.d1) / b.value;
  T q2 = (a.d2 - T(2.0) * q1 * b.d1 - q * b.d2) / b.value;
  return {q, q1, q2};
}

// Mixed operands: anything convertible to Dual2<T> (T itself or arithmetic).
#define PIPN_DUAL2_MIXED(op)                                                  \
  template <class T, class S>                                                 \
    requires std::convertible_to<S, Dual2<T>> && (!std::is_same_v<S, Dual2<T>>) \
  Dual2<T> operator op(const Dual2<T>& a, const S& b) {                       \
    return a op Dual2<T>(b);                                                  \
  }                                                                           \
  template <class T, class S>                                                 \
    requires std::convertible_to<S, Dual2<T>> && (!std::is_same_v<S, Dual2<T>>) \
  Dual2<T> operator op(const S& a, const Dual2<T>& b) {                       \
    return Dual2<T>(a) op b;                                                  \
  }
PIPN_DUAL2_MIXED(+)
PIPN_DUAL2_MIXED(-)
PIPN_DUAL2_MIXED(*)
PIPN_DUAL2_MIXED(/)
#undef PIPN_DUAL2_MIXED

template <class T>
bool operator<(const Dual2<T>& a, const Dual2<T>& b) {
  return primal(a) < primal(b);
}

template <class T>
Dual2<T> sin(const Dual2<T>& f) {
  using std::cos;
  using std::sin;
  T s = sin(f.value);
  return compose(f, s, T(cos(f.value)), -s);
}

template <class T>
Dual2<T> cos(const Dual2<T>& f) {
  using std::cos;
  using std::sin;
  T c = cos(f.value);
  return compose(f, c, T(-sin(f.value)), -c);
}

template <class T>
Dual2<T> exp(const Dual2<T>& f) {
  using std::exp;
  T e = exp(f.value);
  return compose(f, e, e, e);
}

template <class T>
Dual2<T> tanh(const Dual2<T>& f) {
  using std::tanh;
  T t = tanh(f.value);
  T s = T(1.0) - t * t;
  return compose(f, t, s, T(-2.0) * t * s);
}

template <class T>
Dual2<T> sqrt(const Dual2<T>& f) {
  using std::sqrt;
  if (primal(f.value) <= 0.0) {
    throw DomainError("sqrt of non-positive value during derivative propagation");
  }
  T r = sqrt(f.value);
  T g1 = T(0.5) / r;
  return compose(f, r, g1, -g1 / (T(2.0) * f.value));
}

template <class T>
Dual2<T> pow(const Dual2<T>& f, double p) {
  using std::pow;
  double base = primal(f.value);
  if (p != std::floor(p) && base <= 0.0) {
    throw DomainError("non-integer power of non-positive value");
  }
  if (base == 0.0 && p < 2.0 && p != 0.0 && p != 1.0) {
    throw DomainError("power derivative undefined at zero");
  }
  if (p == 0.0) return Dual2<T>(T(1.0));
  T g0 = pow(f.value, p);
  T g1 = T(p) * pow(f.value, p - 1.0);
  T g2 = T(p * (p - 1.0)) * (p == 1.0 ? T(0.0) : pow(f.value, p - 2.0));
  return compose(f, g0, g1, g2);
}

/// x * sigmoid(x)
template <class T>
Dual2<T> silu(const Dual2<T>& f) {
  using std::exp;
  T s = T(1.0) / (T(1.0) + exp(-f.value));
  T q = s * (T(1.0) - s);
  return compose(f, f.value * s, s + f.value * q, q * (T(2.0) + f.value * (T(1.0) - T(2.0) * s)));
}

/// sqrt(x^2 + eps): differentiable stand-in for |x|.
template <class T>
Dual2<T> smooth_abs(const Dual2<T>& f, double eps = 1e-12) {
  return sqrt(f * f + Dual2<T>(T(eps)));
}

/// Picks the operand with the larger value; ties go to `a`.
template <class T>
Dual2<T> max(const Dual2<T>& a, const Dual2<T>& b) {
  return primal(b) > primal(a) ? b : a;
}

/// Named unary primitive lookup, for functions assembled at runtime.
template <class T>
Dual2<T> apply(std::string_view primitive, const Dual2<T>& x) {
  if (primitive == "sin") return sin(x);
  if (primitive == "cos") return cos(x);
  if (primitive == "exp") return exp(x);
  if (primitive == "tanh") return tanh(x);
  if (primitive == "silu") return silu(x);
  if (primitive == "sqrt") return sqrt(x);
  if (primitive == "abs") return smooth_abs(x);
  if (primitive == "neg") return -x;
  throw UnsupportedPrimitive(std::string(primitive));
}

/// Named binary primitive lookup.
template <class T>
Dual2<T> apply(std::string_view primitive, const Dual2<T>& a, const Dual2<T>& b) {
  if (primitive == "add") return a + b;
  if (primitive == "sub") return a - b;
  if (primitive == "mul") return a * b;
  if (primitive == "div") return a / b;
  if (primitive == "max") return max(a, b);
  if (primitive == "pow") return pow(a, primal(b));
  throw UnsupportedPrimitive(std::string(primitive));
}

/// Seeds x + t v and evaluates f once. `f` takes std::span<const Dual2<T>>
/// and returns either a Dual2<T> or a std::vector<Dual2<T>>.
template <class T = double, class F>
auto directional_derivatives(F&& f, std::span<const T> x, std::span<const T> v) {
  if (x.size() != v.size()) {
    throw ConfigurationError("direction and point dimensions differ");
  }
  double norm2 = 0.0;
  for (const auto& vi : v) norm2 += primal(vi) * primal(vi);
  if (std::abs(norm2 - 1.0) > 1e-12) {
    throw ConfigurationError("direction must have unit norm");
  }
  std::vector<Dual2<T>> seeded(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    seeded[i] = Dual2<T>(x[i], v[i], T(0.0));
  }
  return f(std::span<const Dual2<T>>(seeded));
}

}  // namespace pipn::ad
