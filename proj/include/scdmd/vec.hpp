#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scdmd/error.hpp"

namespace scdmd {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

inline void require_size(ConstSpan v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw ShapeError(std::string(what) + ": expected length " +
                     std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

inline double squared_norm(ConstSpan v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double squared_distance(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline bool all_finite(ConstSpan v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

/// a - b
inline Vec subtract(ConstSpan a, ConstSpan b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

/// y += alpha * x (plain loop; kernels::active().axpy for long vectors)
inline void add_scaled(MutSpan y, double alpha, ConstSpan x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace scdmd
