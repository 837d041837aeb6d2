#include "scdmd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scdmd/kernels.hpp"
#include "scdmd/transport.hpp"

namespace scdmd {
namespace {

void check_pair(const PointSet& a, const PointSet& b) {
  if (a.dim != b.dim) throw ShapeError("point sets differ in dimension");
  if (a.size() == 0 || b.size() == 0) throw DomainError("empty point set");
}

// Sum over i in rows_a, j in rows_b of |a_i - b_j|, pairs summed per row.
double cross_sum(const PointSet& a, const PointSet& b) {
  const auto& k = kernels::active();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += k.sum_distances(a.row(i), b.data.data(), b.size(), b.dim);
  }
  return total;
}

// Sum over ordered pairs i != j of |a_i - a_j|.
double self_sum(const PointSet& a) {
  const auto& k = kernels::active();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    total += k.sum_distances(a.row(i), a.row(i + 1), a.size() - i - 1, a.dim);
  }
  return 2.0 * total;
}

}  // namespace

PointSet::PointSet(std::size_t dim, Vec data) : dim(dim), data(std::move(data)) {
  if (dim == 0 || this->data.size() % dim != 0) {
    throw ShapeError("point set: data length is not a multiple of dim");
  }
}

PointSet PointSet::from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) throw DomainError("point set: no rows");
  const std::size_t dim = rows.front().size();
  Vec data;
  data.reserve(dim * rows.size());
  for (const Vec& r : rows) {
    require_size(r, dim, "point set row");
    data.insert(data.end(), r.begin(), r.end());
  }
  return PointSet(dim, std::move(data));
}

double energy_distance(const PointSet& a, const PointSet& b) {
  check_pair(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double xy = cross_sum(a, b) / (na * nb);
  const double xx = self_sum(a) / (na * na);
  const double yy = self_sum(b) / (nb * nb);
  return std::max(0.0, 2.0 * xy - xx - yy);
}

double energy_test_pvalue(const PointSet& a, const PointSet& b,
                          std::size_t n_permutations, Rng& rng) {
  check_pair(a, b);
  const std::size_t na = a.size(), n = a.size() + b.size(), dim = a.dim;
  PointSet pooled(dim, a.data);
  pooled.data.insert(pooled.data.end(), b.data.begin(), b.data.end());
  const double observed = energy_distance(a, b);

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t exceed = 0;
  PointSet pa, pb;
  pa.dim = pb.dim = dim;
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    pa.data.clear();
    pb.data.clear();
    for (std::size_t i = 0; i < n; ++i) {
      Vec& dst = i < na ? pa.data : pb.data;
      dst.insert(dst.end(), pooled.row(idx[i]), pooled.row(idx[i]) + dim);
    }
    if (energy_distance(pa, pb) >= observed) ++exceed;
  }
  return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_permutations);
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein2_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
  }
  // Walk the merged quantile breakpoints of the two empirical CDFs.
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double ra = wa, rb = wb, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    total += m * (a[i] - b[j]) * (a[i] - b[j]);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15) {
      ++i;
      ra = wa;
    }
    if (rb <= 1e-15) {
      ++j;
      rb = wb;
    }
  }
  return std::sqrt(total);
}

double sliced_wasserstein(const PointSet& a, const PointSet& b,
                          std::size_t n_projections, Rng& rng) {
  check_pair(a, b);
  if (n_projections == 0) throw DomainError("sliced_wasserstein: n_projections must be >= 1");
  const std::size_t dim = a.dim;
  Vec dir(dim);
  std::vector<double> pa(a.size()), pb(b.size());
  double total = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    double nrm = 0.0;
    do {
      rng.fill_normal(dir);
      nrm = std::sqrt(squared_norm(dir));
    } while (nrm < 1e-12);
    for (double& x : dir) x /= nrm;
    for (std::size_t i = 0; i < a.size(); ++i) {
      pa[i] = std::inner_product(dir.begin(), dir.end(), a.row(i), 0.0);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      pb[i] = std::inner_product(dir.begin(), dir.end(), b.row(i), 0.0);
    }
    total += wasserstein2_1d(pa, pb);
  }
  return total / static_cast<double>(n_projections);
}

double cross_step_consistency(const VectorField& generator,
                              const std::vector<TimestepGrid>& grids,
                              const std::vector<Vec>& noises,
                              ConstSpan context) {
  if (grids.size() < 2) throw DomainError("cross_step_consistency: need >= 2 grids");
  if (noises.empty()) throw DomainError("cross_step_consistency: no noises");
  double total = 0.0;
  std::vector<Vec> finals(grids.size());
  for (const Vec& z : noises) {
    for (std::size_t g = 0; g < grids.size(); ++g) {
      finals[g] = sample_k_steps(generator, grids[g], z, context).final_state();
    }
    double pair_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t g = 0; g < grids.size(); ++g) {
      for (std::size_t h = g + 1; h < grids.size(); ++h) {
        pair_sum += std::sqrt(squared_distance(finals[g], finals[h]));
        ++pairs;
      }
    }
    total += pair_sum / static_cast<double>(pairs);
  }
  return total / static_cast<double>(noises.size());
}

}  // namespace scdmd
