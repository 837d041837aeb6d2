#pragma once

// Analytic flow-matching teacher over isotropic Gaussian mixtures.

#include <cstddef>
#include <vector>

#include "scdmd/rng.hpp"
#include "scdmd/vec.hpp"

namespace scdmd {

struct GaussianComponent {
  double weight = 1.0;
  Vec mean;
  double variance = 1.0;  // isotropic
};

struct GaussianMixture {
  std::size_t dim = 0;
  std::vector<GaussianComponent> components;

  GaussianMixture() = default;
  GaussianMixture(std::size_t dim, std::vector<GaussianComponent> components);

  /// Throws DomainError unless weights sum to 1 (1e-12) and variances are > 0.
  void validate() const;

  static GaussianMixture standard_normal(std::size_t dim);
};

enum class PathKind { kRectified, kCosine };

/// x_t = alpha(t) x_0 + sigma(t) eps, with alpha(0)=1, sigma(0)=0,
/// alpha(1)=0, sigma(1)=1.
struct NoisePath {
  PathKind kind = PathKind::kRectified;

  double alpha(double t) const;
  double sigma(double t) const;
  double alpha_dot(double t) const;
  double sigma_dot(double t) const;

  /// Clean point implied by state x and velocity v at level t.
  Vec clean_readout(ConstSpan x, ConstSpan v, double t) const;
  /// Noise implied by state x and velocity v at level t.
  Vec noise_readout(ConstSpan x, ConstSpan v, double t) const;
};

/// Smallest level at which velocities are evaluated.
inline constexpr double kTimeFloor = 1e-3;

double gmm_log_density(const GaussianMixture& gmm, ConstSpan x);
Vec gmm_score(const GaussianMixture& gmm, ConstSpan x);

/// Per-component posterior responsibilities at x.
Vec gmm_responsibilities(const GaussianMixture& gmm, ConstSpan x);

Vec gmm_sample(const GaussianMixture& gmm, Rng& rng);

/// Marginal of x_t when x_0 ~ gmm: component k becomes
/// N(alpha mu_k, (alpha^2 s_k + sigma^2) I).
GaussianMixture diffused_gmm(const GaussianMixture& gmm, const NoisePath& path,
                             double t);

/// Probability-flow velocity alpha'(t) E[x0|x_t] + sigma'(t) E[eps|x_t].
/// Throws DomainError for t outside (0, 1].
Vec teacher_velocity(const GaussianMixture& gmm, const NoisePath& path,
                     ConstSpan x, double t);

/// Score of the diffused marginal at level t.
Vec teacher_score(const GaussianMixture& gmm, const NoisePath& path,
                  ConstSpan x, double t);

Vec forward_noise(const NoisePath& path, ConstSpan x0, double t, ConstSpan eps);

/// Fine-grid Euler integration of the teacher velocity from t_from down to
/// t_to. Requires 1 >= t_from >= t_to >= kTimeFloor and substeps >= 1.
Vec oracle_flow_map(const GaussianMixture& gmm, const NoisePath& path,
                    ConstSpan x, double t_from, double t_to,
                    std::size_t substeps);

}  // namespace scdmd
