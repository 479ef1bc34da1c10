#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "pipn/errors.hpp"

namespace pipn::ad {

struct FdCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Relative discrepancy with the denominator floored at 1e-12.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

/// Compares an analytic gradient with central differences. `f(x)` returns
/// {value, gradient}; only the value is used at the perturbed points.
template <class F>
FdCheckResult fd_check_detailed(F&& f, std::vector<double> x, double step) {
  if (!(step > 0.0)) throw DomainError("fd_check: step must be positive");
  const auto [value, analytic] = f(std::span<const double>(x));
  (void)value;
  if (analytic.size() != x.size()) throw ConfigurationError("fd_check: gradient size differs from x");
  FdCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + step;
    const double fp = f(std::span<const double>(x)).first;
    x[i] = xi - step;
    const double fm = f(std::span<const double>(x)).first;
    x[i] = xi;
    const double err = relative_error(analytic[i], (fp - fm) / (2.0 * step));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

template <class F>
double fd_check(F&& f, std::vector<double> x, double step) {
  return fd_check_detailed(std::forward<F>(f), std::move(x), step).max_rel_error;
}

}  // namespace pipn::ad
