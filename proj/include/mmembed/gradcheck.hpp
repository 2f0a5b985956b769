// SPDX-License-Identifier: Apache-2.0
#ifndef MMEMBED_GRADCHECK_HPP_
#define MMEMBED_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmembed/errors.hpp"

namespace mmembed {

/// One parameter tensor to perturb, alongside the analytic gradient claimed
/// for it.
template <class Real>
struct ParamSlot {
  std::string name;
  std::span<Real> values;
  std::span<const Real> analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-6)
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of every coordinate in `slots`. `loss` is called
/// with no arguments and must read the (temporarily perturbed) parameters.
/// Each coordinate is restored bit-exactly after probing.
template <class Real, class Loss>
GradCheckReport check_gradients(Loss&& loss, std::span<const ParamSlot<Real>> slots, double h,
                                double tol) {
  if (!(h > 0.0)) throw ConfigError("check_gradients: step must be positive");
  GradCheckReport report;
  report.tolerance = tol;
  for (const auto& slot : slots) {
    if (slot.values.size() != slot.analytic.size()) {
      throw ShapeError("check_gradients: gradient for '" + slot.name + "' has wrong size");
    }
    for (std::size_t i = 0; i < slot.values.size(); ++i) {
      const Real saved = slot.values[i];
      slot.values[i] = saved + static_cast<Real>(h);
      const double plus = static_cast<double>(loss());
      slot.values[i] = saved - static_cast<Real>(h);
      const double minus = static_cast<double>(loss());
      slot.values[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("check_gradients: non-finite loss while probing '" + slot.name +
                           "'[" + std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = static_cast<double>(slot.analytic[i]);
      const double err = relative_error(analytic, numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
        report.worst_param = slot.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

/// Single flat parameter vector.
template <class Loss>
GradCheckReport check_gradients(Loss&& loss, std::span<double> theta,
                                std::span<const double> analytic, double h, double tol) {
  const ParamSlot<double> slot{"theta", theta, analytic};
  return check_gradients<double>(std::forward<Loss>(loss), std::span<const ParamSlot<double>>(&slot, 1),
                                 h, tol);
}

}  // namespace mmembed

#endif  // MMEMBED_GRADCHECK_HPP_
