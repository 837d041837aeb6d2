#include "scdmd/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace scdmd {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

// log w_k + log N(x; mu_k, s_k I) for every component.
Vec component_log_terms(const GaussianMixture& gmm, ConstSpan x) {
  Vec terms(gmm.components.size());
  const double d = static_cast<double>(gmm.dim);
  for (std::size_t k = 0; k < gmm.components.size(); ++k) {
    const auto& c = gmm.components[k];
    const double sq = squared_distance(x, c.mean);
    terms[k] = std::log(c.weight) - 0.5 * d * (kLog2Pi + std::log(c.variance)) -
               0.5 * sq / c.variance;
  }
  return terms;
}

double log_sum_exp(ConstSpan terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

void check_time(double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw DomainError("teacher velocity: t must lie in (0, 1], got " +
                      std::to_string(t));
  }
}

}  // namespace

GaussianMixture::GaussianMixture(std::size_t dim,
                                 std::vector<GaussianComponent> components)
    : dim(dim), components(std::move(components)) {
  validate();
}

void GaussianMixture::validate() const {
  if (dim == 0) throw DomainError("gmm: dim must be >= 1");
  if (components.empty()) throw DomainError("gmm: no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (c.mean.size() != dim) throw ShapeError("gmm: component mean has wrong dim");
    if (!(c.variance > 0.0)) throw DomainError("gmm: variance must be > 0");
    if (!(c.weight >= 0.0)) throw DomainError("gmm: weight must be >= 0");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError("gmm: weights sum to " + std::to_string(total));
  }
}

GaussianMixture GaussianMixture::standard_normal(std::size_t dim) {
  return GaussianMixture(dim, {{1.0, Vec(dim, 0.0), 1.0}});
}

double NoisePath::alpha(double t) const {
  if (kind == PathKind::kRectified) return 1.0 - t;
  return std::cos(0.5 * std::numbers::pi * t);
}

double NoisePath::sigma(double t) const {
  if (kind == PathKind::kRectified) return t;
  return std::sin(0.5 * std::numbers::pi * t);
}

double NoisePath::alpha_dot(double t) const {
  if (kind == PathKind::kRectified) return -1.0;
  return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
}

double NoisePath::sigma_dot(double t) const {
  if (kind == PathKind::kRectified) return 1.0;
  return 0.5 * std::numbers::pi * std::cos(0.5 * std::numbers::pi * t);
}

Vec NoisePath::clean_readout(ConstSpan x, ConstSpan v, double t) const {
  const double a = alpha(t), s = sigma(t), ad = alpha_dot(t), sd = sigma_dot(t);
  const double det = a * sd - s * ad;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (sd * x[i] - s * v[i]) / det;
  return out;
}

Vec NoisePath::noise_readout(ConstSpan x, ConstSpan v, double t) const {
  const double a = alpha(t), s = sigma(t), ad = alpha_dot(t), sd = sigma_dot(t);
  const double det = a * sd - s * ad;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (a * v[i] - ad * x[i]) / det;
  return out;
}

double gmm_log_density(const GaussianMixture& gmm, ConstSpan x) {
  require_size(x, gmm.dim, "gmm point");
  return log_sum_exp(component_log_terms(gmm, x));
}

Vec gmm_responsibilities(const GaussianMixture& gmm, ConstSpan x) {
  require_size(x, gmm.dim, "gmm point");
  Vec r = component_log_terms(gmm, x);
  const double lse = log_sum_exp(r);
  for (double& v : r) v = std::exp(v - lse);
  return r;
}

Vec gmm_score(const GaussianMixture& gmm, ConstSpan x) {
  const Vec r = gmm_responsibilities(gmm, x);
  Vec score(gmm.dim, 0.0);
  for (std::size_t k = 0; k < gmm.components.size(); ++k) {
    const auto& c = gmm.components[k];
    const double coef = r[k] / c.variance;
    for (std::size_t i = 0; i < gmm.dim; ++i) score[i] += coef * (c.mean[i] - x[i]);
  }
  return score;
}

Vec gmm_sample(const GaussianMixture& gmm, Rng& rng) {
  const double u = rng.uniform();
  std::size_t k = 0;
  double acc = gmm.components[0].weight;
  while (u >= acc && k + 1 < gmm.components.size()) {
    ++k;
    acc += gmm.components[k].weight;
  }
  const auto& c = gmm.components[k];
  const double sd = std::sqrt(c.variance);
  Vec x(gmm.dim);
  for (std::size_t i = 0; i < gmm.dim; ++i) x[i] = c.mean[i] + sd * rng.normal();
  return x;
}

GaussianMixture diffused_gmm(const GaussianMixture& gmm, const NoisePath& path,
                             double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("diffused_gmm: t must lie in [0, 1]");
  }
  const double a = path.alpha(t);
  const double s = path.sigma(t);
  GaussianMixture out;
  out.dim = gmm.dim;
  out.components.reserve(gmm.components.size());
  for (const auto& c : gmm.components) {
    GaussianComponent d;
    d.weight = c.weight;
    d.mean.resize(gmm.dim);
    for (std::size_t i = 0; i < gmm.dim; ++i) d.mean[i] = a * c.mean[i];
    d.variance = a * a * c.variance + s * s;
    out.components.push_back(std::move(d));
  }
  return out;
}

Vec teacher_velocity(const GaussianMixture& gmm, const NoisePath& path,
                     ConstSpan x, double t) {
  check_time(t);
  require_size(x, gmm.dim, "teacher velocity state");
  const double a = path.alpha(t);
  const double s = path.sigma(t);
  const GaussianMixture marginal = diffused_gmm(gmm, path, t);
  const Vec r = gmm_responsibilities(marginal, x);
  // Per component: E[x0|x] = mu + a s_k / var (x - a mu),
  //                E[eps|x] = s / var (x - a mu).
  Vec mean_x0(gmm.dim, 0.0), mean_eps(gmm.dim, 0.0);
  for (std::size_t k = 0; k < gmm.components.size(); ++k) {
    const auto& c = gmm.components[k];
    const double var = marginal.components[k].variance;
    const double gx = r[k] * a * c.variance / var;
    const double ge = r[k] * s / var;
    for (std::size_t i = 0; i < gmm.dim; ++i) {
      const double resid = x[i] - a * c.mean[i];
      mean_x0[i] += r[k] * c.mean[i] + gx * resid;
      mean_eps[i] += ge * resid;
    }
  }
  const double ad = path.alpha_dot(t);
  const double sd = path.sigma_dot(t);
  Vec v(gmm.dim);
  for (std::size_t i = 0; i < gmm.dim; ++i) v[i] = ad * mean_x0[i] + sd * mean_eps[i];
  return v;
}

Vec teacher_score(const GaussianMixture& gmm, const NoisePath& path,
                  ConstSpan x, double t) {
  return gmm_score(diffused_gmm(gmm, path, t), x);
}

Vec forward_noise(const NoisePath& path, ConstSpan x0, double t, ConstSpan eps) {
  require_size(eps, x0.size(), "forward_noise eps");
  const double a = path.alpha(t);
  const double s = path.sigma(t);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Vec oracle_flow_map(const GaussianMixture& gmm, const NoisePath& path,
                    ConstSpan x, double t_from, double t_to,
                    std::size_t substeps) {
  if (substeps == 0) throw DomainError("oracle_flow_map: substeps must be >= 1");
  if (t_from > 1.0 || t_to < kTimeFloor || t_from < t_to) {
    throw DomainError("oracle_flow_map: need 1 >= t_from >= t_to >= t_min");
  }
  Vec state(x.begin(), x.end());
  if (t_from == t_to) return state;
  const double h = (t_from - t_to) / static_cast<double>(substeps);
  for (std::size_t i = 0; i < substeps; ++i) {
    const double t = t_from - static_cast<double>(i) * h;
    const Vec v = teacher_velocity(gmm, path, state, t);
    for (std::size_t j = 0; j < state.size(); ++j) state[j] -= h * v[j];
  }
  return state;
}

}  // namespace scdmd
