#pragma once

#include <optional>
#include <vector>

#include "scdmd/rng.hpp"

namespace scdmd {

enum class GridKind { kTraining, kInference };

/// Strictly decreasing noise levels starting at 1. A K-step inference grid
/// holds K points; the sampler's final step reads out the clean estimate.
struct TimestepGrid {
  std::vector<double> points;
  GridKind kind = GridKind::kInference;
  double shift = 1.0;

  std::size_t size() const { return points.size(); }
  double min() const { return points.back(); }
  bool contains(double t) const;
  /// Level after step i; 0 past the last point.
  double next(std::size_t i) const {
    return i + 1 < points.size() ? points[i + 1] : 0.0;
  }
};

/// Flow-shift transform of the uniform grid: u_i = 1 - i/n,
/// t_i = shift u_i / (1 + (shift - 1) u_i).
double shift_time(double u, double shift);
TimestepGrid make_grid(std::size_t n_points, double shift, GridKind kind);

struct ShortcutTriple {
  double t_s = 0.0;
  double t_m = 0.0;
  double t_e = 0.0;
};

/// t_e uniform over inference points below t_s, then t_m uniform over
/// training points strictly between t_e and t_s. Returns nullopt when either
/// candidate set is empty. Throws DomainError if t_s is not a training point.
std::optional<ShortcutTriple> sample_triple(Rng& rng, double t_s,
                                            const TimestepGrid& train,
                                            const TimestepGrid& infer);

/// Copy of `grid` with the sampler's terminal time 0 appended, so that the
/// final readout interval can serve as a shortcut endpoint.
TimestepGrid with_terminal(const TimestepGrid& grid);

/// Training points strictly inside (lo, hi).
std::vector<double> points_between(const TimestepGrid& grid, double lo,
                                   double hi);

}  // namespace scdmd
