#include "scdmd/schedule.hpp"

#include <cmath>
#include <string>

#include "scdmd/error.hpp"

namespace scdmd {
namespace {

constexpr double kMembershipTol = 1e-12;

}  // namespace

bool TimestepGrid::contains(double t) const {
  for (double p : points) {
    if (std::abs(p - t) <= kMembershipTol) return true;
  }
  return false;
}

double shift_time(double u, double shift) {
  return shift * u / (1.0 + (shift - 1.0) * u);
}

TimestepGrid make_grid(std::size_t n_points, double shift, GridKind kind) {
  if (n_points == 0) throw DomainError("make_grid: n_points must be >= 1");
  if (!(shift > 0.0)) throw DomainError("make_grid: shift must be > 0");
  TimestepGrid grid;
  grid.kind = kind;
  grid.shift = shift;
  grid.points.reserve(n_points);
  const double n = static_cast<double>(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double u = 1.0 - static_cast<double>(i) / n;
    grid.points.push_back(i == 0 ? 1.0 : shift_time(u, shift));
  }
  return grid;
}

std::vector<double> points_between(const TimestepGrid& grid, double lo,
                                   double hi) {
  std::vector<double> out;
  for (double p : grid.points) {
    if (p > lo && p < hi) out.push_back(p);
  }
  return out;
}

std::optional<ShortcutTriple> sample_triple(Rng& rng, double t_s,
                                            const TimestepGrid& train,
                                            const TimestepGrid& infer) {
  if (!train.contains(t_s)) {
    throw DomainError("sample_triple: t_s=" + std::to_string(t_s) +
                      " is not on the training grid");
  }
  std::vector<double> ends;
  for (double p : infer.points) {
    if (p < t_s) ends.push_back(p);
  }
  if (ends.empty()) return std::nullopt;
  const double t_e = ends[rng.index(ends.size())];
  const std::vector<double> mids = points_between(train, t_e, t_s);
  if (mids.empty()) return std::nullopt;
  const double t_m = mids[rng.index(mids.size())];
  return ShortcutTriple{t_s, t_m, t_e};
}

TimestepGrid with_terminal(const TimestepGrid& grid) {
  TimestepGrid out = grid;
  if (out.points.empty() || out.points.back() > 0.0) out.points.push_back(0.0);
  return out;
}

}  // namespace scdmd
