#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "bcd/tensor.hpp"

namespace bcd {

/// Central-difference gradient (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) of a
/// scalar function at `point`.
template <class T, class F>
Tensor<T> finite_diff_gradient(F&& f, const Tensor<T>& point, T eps = T(1e-3)) {
  Tensor<T> grad(point.shape());
  Tensor<T> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (T(2) * eps);
  }
  return grad;
}

/// Agreement summary between an analytic gradient and a finite-difference estimate.
struct GradCheck {
  std::size_t coords = 0;
  std::size_t within_rel = 0;  ///< coordinates with relative error below the threshold
  double max_abs_err = 0;
  double worst_rel_err = 0;

  double fraction_ok() const { return coords == 0 ? 1.0 : double(within_rel) / double(coords); }
  /// The acceptance rule: >= 95% of coordinates within `rel`, all within `abs` absolute.
  bool passes(double abs_tol = 1e-2) const { return fraction_ok() >= 0.95 && max_abs_err <= abs_tol; }
};

/// Relative error is |a - b| / max(|a|, |b|). Coordinates where both magnitudes
/// are below `tiny` are counted as agreeing (the quotient is meaningless there).
template <class A, class B>
GradCheck compare_gradients(const Tensor<A>& analytic, const Tensor<B>& numeric, double rel_tol,
                            double tiny = 1e-9) {
  require_same_shape(analytic.shape(), numeric.shape(), "compare_gradients");
  GradCheck r;
  r.coords = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = double(analytic[i]), b = double(numeric[i]);
    const double err = std::abs(a - b);
    const double mag = std::max(std::abs(a), std::abs(b));
    r.max_abs_err = std::max(r.max_abs_err, err);
    const double rel = mag < tiny ? 0.0 : err / mag;
    r.worst_rel_err = std::max(r.worst_rel_err, rel);
    if (rel < rel_tol) ++r.within_rel;
  }
  return r;
}

}  // namespace bcd
