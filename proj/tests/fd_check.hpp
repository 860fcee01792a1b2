// Test-only finite-difference oracles. These stay independent of the library
// gradient code paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace fd {

// Central difference d f / d x at the slot pointed to.
template <typename F>
double central(const F& f, double* slot, double h) {
  const double saved = *slot;
  *slot = saved + h;
  const double fp = f();
  *slot = saved - h;
  const double fm = f();
  *slot = saved;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max(floor, std::abs(analytic) + std::abs(numeric));
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double max_rel_err = 0.0;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  void update(int idx, double analytic, double numeric, double floor = 1e-8) {
    const double e = rel_err(analytic, numeric, floor);
    if (e > max_rel_err) {
      max_rel_err = e;
      worst_index = idx;
      worst_analytic = analytic;
      worst_numeric = numeric;
    }
  }
};

}  // namespace fd
