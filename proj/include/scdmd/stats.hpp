#pragma once

// Two-sample statistics and sampler diagnostics used for evaluation.

#include <vector>

#include "scdmd/field.hpp"
#include "scdmd/rng.hpp"
#include "scdmd/schedule.hpp"

namespace scdmd {

/// Points stored row-major: count x dim.
struct PointSet {
  std::size_t dim = 0;
  Vec data;

  PointSet() = default;
  PointSet(std::size_t dim, Vec data);
  static PointSet from_rows(const std::vector<Vec>& rows);

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  const double* row(std::size_t i) const { return data.data() + i * dim; }
};

/// V-statistic energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'|.
double energy_distance(const PointSet& a, const PointSet& b);

/// Permutation p-value of the energy distance ((1 + #{perm >= obs}) /
/// (1 + n_permutations)).
double energy_test_pvalue(const PointSet& a, const PointSet& b,
                          std::size_t n_permutations, Rng& rng);

/// Exact 1-D Wasserstein-2 between two empirical measures with uniform
/// weights (sample sizes may differ). Sorts its arguments.
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Mean over random unit directions of the 1-D Wasserstein-2 distance
/// between the projected samples.
double sliced_wasserstein(const PointSet& a, const PointSet& b,
                          std::size_t n_projections, Rng& rng);

/// Mean over noises of the mean pairwise L2 distance between the final
/// Euler-sampler outputs obtained on each grid from the same noise.
double cross_step_consistency(const VectorField& generator,
                              const std::vector<TimestepGrid>& grids,
                              const std::vector<Vec>& noises,
                              ConstSpan context = {});

}  // namespace scdmd
