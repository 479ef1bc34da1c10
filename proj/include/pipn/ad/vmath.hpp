#pragma once

// Elementwise exp / expm1 over arrays of doubles. Every element, including
// the tail of the array, goes through the same vector code, so results do
// not depend on an element's position.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>

namespace pipn::ad::vmath {

inline constexpr int kLanes = 8;
typedef double V8 __attribute__((vector_size(kLanes * sizeof(double))));
typedef std::int64_t I8 __attribute__((vector_size(kLanes * sizeof(std::int64_t))));

namespace detail {

inline V8 splat(double v) { return V8{} + v; }

/// expm1(r) for |r| <= ln2/2 (Taylor series to degree 13).
inline V8 expm1_reduced(V8 r) {
  constexpr double c[] = {1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
                          1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,      1.0 / 720.0,
                          1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,         0.5,
                          1.0};
  V8 p = splat(c[0]);
  for (int i = 1; i < 13; ++i) p = p * r + c[i];
  return p * r;
}

/// y = n ln2 + r with |r| <= ln2/2; returns r and 2^n. `y` must lie in
/// [-700, 700].
inline V8 reduce(V8 y, V8& scale) {
  constexpr double log2e = 1.4426950408889634074;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  constexpr double shifter = 6755399441055744.0;  // 1.5 * 2^52
  const V8 n = (y * log2e + shifter) - shifter;
  const V8 r = (y - n * ln2_hi) - n * ln2_lo;
  const I8 bits = (__builtin_convertvector(n, I8) + 1023) << 52;
  std::memcpy(&scale, &bits, sizeof(V8));
  return r;
}

inline V8 clamp(V8 y) {
  const V8 lo = splat(-700.0), hi = splat(700.0);
  y = y < lo ? lo : y;
  return y > hi ? hi : y;
}

inline V8 keep_nan(V8 in, V8 out) { return in != in ? in : out; }

inline V8 exp8(V8 y) {
  V8 s;
  const V8 r = reduce(clamp(y), s);
  return keep_nan(y, s * expm1_reduced(r) + s);
}

inline V8 expm18(V8 y) {
  V8 s;
  const V8 r = reduce(clamp(y), s);
  return keep_nan(y, s * expm1_reduced(r) + (s - 1.0));
}

template <class F>
void apply(const double* in, double* out, std::size_t n, F&& f) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    V8 v;
    std::memcpy(&v, in + i, sizeof(V8));
    v = f(v);
    std::memcpy(out + i, &v, sizeof(V8));
  }
  if (i < n) {
    double buf[kLanes] = {};
    std::memcpy(buf, in + i, (n - i) * sizeof(double));
    V8 v;
    std::memcpy(&v, buf, sizeof(V8));
    v = f(v);
    std::memcpy(buf, &v, sizeof(V8));
    std::memcpy(out + i, buf, (n - i) * sizeof(double));
  }
}

}  // namespace detail

/// out[i] = exp(in[i]); inputs are clamped to [-700, 700].
inline void exp(const double* in, double* out, std::size_t n) { detail::apply(in, out, n, detail::exp8); }

/// out[i] = expm1(in[i]); inputs are clamped to [-700, 700].
inline void expm1(const double* in, double* out, std::size_t n) { detail::apply(in, out, n, detail::expm18); }

/// Logistic function 1 / (1 + exp(-x)).
inline void sigmoid(const double* in, double* out, std::size_t n) {
  detail::apply(in, out, n, [](V8 x) { return 1.0 / (1.0 + detail::exp8(-x)); });
}

/// tanh(x) = sign(x) e / (e + 2) with e = expm1(2 |x|).
inline void tanh(const double* in, double* out, std::size_t n) {
  detail::apply(in, out, n, [](V8 x) {
    const V8 zero{};
    const V8 a = x < zero ? -x : x;
    const V8 e = detail::expm18(2.0 * a);
    const V8 t = e / (e + 2.0);
    return detail::keep_nan(x, x < zero ? -t : t);
  });
}

}  // namespace pipn::ad::vmath
