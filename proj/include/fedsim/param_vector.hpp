#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace fedsim {

// Flat dense vector of model dimension d. Universal carrier for models,
// gradients, control and momentum variables.
using ParamVector = std::vector<double>;

inline double l2_norm_sq(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

inline double l2_norm(const ParamVector& v) { return std::sqrt(l2_norm_sq(v)); }

inline double linf_norm(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v) acc = std::max(acc, std::fabs(x));
  return acc;
}

inline double l2_dist_sq(const ParamVector& a, const ParamVector& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}

inline bool all_finite(const ParamVector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace fedsim
