#include <doctest.h>

#include <cmath>
#include <numbers>

#include "scdmd/stats.hpp"
#include "scdmd/teacher.hpp"

using namespace scdmd;

namespace {

GaussianMixture two_bumps() {
  return GaussianMixture(2, {{0.3, {-1.5, 0.5}, 0.4}, {0.7, {2.0, -1.0}, 0.9}});
}

GaussianMixture single(Vec mean, double var) {
  const std::size_t d = mean.size();
  return GaussianMixture(d, {{1.0, std::move(mean), var}});
}

}  // namespace

TEST_CASE("gmm validation") {
  CHECK_THROWS_AS(GaussianMixture(2, {{0.5, {0.0, 0.0}, 1.0}}), DomainError);
  CHECK_THROWS_AS(GaussianMixture(2, {{1.0, {0.0, 0.0}, 0.0}}), DomainError);
  CHECK_THROWS_AS(GaussianMixture(2, {{1.0, {0.0}, 1.0}}), ShapeError);
}

TEST_CASE("gmm_log_density: standard normal at the mode is -log(2 pi)") {
  const GaussianMixture g = GaussianMixture::standard_normal(2);
  CHECK(gmm_log_density(g, Vec{0.0, 0.0}) ==
        doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("gmm_log_density: symmetric pair at +-mu evaluated at 0") {
  const double var = 0.5;
  const GaussianMixture g(2, {{0.5, {1.0, 2.0}, var}, {0.5, {-1.0, -2.0}, var}});
  // Both components contribute the same density at the origin.
  const double d2 = 5.0;
  const double want = -std::log(2 * std::numbers::pi * var) - d2 / (2 * var);
  CHECK(gmm_log_density(g, Vec{0.0, 0.0}) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("gmm_log_density integrates to 1 on a fine grid") {
  const GaussianMixture g = two_bumps();
  const double lo = -9.0, hi = 9.0;
  const int n = 600;
  const double h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vec x{lo + (i + 0.5) * h, lo + (j + 0.5) * h};
      total += std::exp(gmm_log_density(g, x)) * h * h;
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-3);
}

TEST_CASE("gmm_log_density stays finite far from every component") {
  const GaussianMixture g = two_bumps();
  const double v = gmm_log_density(g, Vec{400.0, -300.0});
  CHECK(std::isfinite(v));
  CHECK(v < -1e4);
}

TEST_CASE("gmm_score: closed forms") {
  const Vec s = gmm_score(GaussianMixture::standard_normal(2), Vec{1.0, 2.0});
  CHECK(s[0] == doctest::Approx(-1.0));
  CHECK(s[1] == doctest::Approx(-2.0));
  const Vec s2 = gmm_score(single({1.0, -3.0}, 0.25), Vec{0.5, 0.5});
  CHECK(s2[0] == doctest::Approx((1.0 - 0.5) / 0.25));
  CHECK(s2[1] == doctest::Approx((-3.0 - 0.5) / 0.25));
}

TEST_CASE("gmm_score matches central differences of the log density") {
  const GaussianMixture g = two_bumps();
  Rng rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    Vec x{rng.uniform(-4, 4), rng.uniform(-4, 4)};
    const Vec s = gmm_score(g, x);
    for (std::size_t i = 0; i < 2; ++i) {
      const double x0 = x[i];
      x[i] = x0 + h;
      const double up = gmm_log_density(g, x);
      x[i] = x0 - h;
      const double down = gmm_log_density(g, x);
      x[i] = x0;
      CHECK(std::abs((up - down) / (2 * h) - s[i]) < 1e-6 * std::max(1.0, std::abs(s[i])));
    }
  }
}

TEST_CASE("gmm_responsibilities sum to one") {
  const Vec r = gmm_responsibilities(two_bumps(), Vec{0.1, 0.2});
  CHECK(r[0] + r[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("noise path endpoints and rates") {
  const NoisePath p;
  CHECK(p.alpha(0.0) == 1.0);
  CHECK(p.sigma(0.0) == 0.0);
  CHECK(p.alpha(1.0) == 0.0);
  CHECK(p.sigma(1.0) == 1.0);
  CHECK(p.alpha_dot(0.3) == -1.0);
  CHECK(p.sigma_dot(0.3) == 1.0);
  const NoisePath c{PathKind::kCosine};
  CHECK(c.alpha(0.0) == doctest::Approx(1.0));
  CHECK(c.sigma(0.0) == doctest::Approx(0.0));
  CHECK(c.alpha(1.0) == doctest::Approx(0.0));
  CHECK(c.sigma(1.0) == doctest::Approx(1.0));
}

TEST_CASE("diffused_gmm: endpoints and the worked example") {
  const GaussianMixture g = two_bumps();
  const NoisePath p;
  const GaussianMixture d0 = diffused_gmm(g, p, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(d0.components[k].mean == g.components[k].mean);
    CHECK(d0.components[k].variance == g.components[k].variance);
  }
  const GaussianMixture d1 = diffused_gmm(g, p, 1.0);
  for (const auto& c : d1.components) {
    CHECK(c.mean == Vec{0.0, 0.0});
    CHECK(c.variance == 1.0);
  }
  const GaussianMixture h = diffused_gmm(single({2.0, 0.0}, 0.04), p, 0.5);
  CHECK(h.components[0].mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(h.components[0].mean[1] == 0.0);
  CHECK(h.components[0].variance == doctest::Approx(0.26).epsilon(1e-15));
  CHECK_THROWS_AS(diffused_gmm(g, p, 1.5), DomainError);
}

TEST_CASE("teacher_velocity: single Gaussian has the linear closed form") {
  // x0 ~ N(0, s I), rectified path: x_t = (1-t) x0 + t eps with variance
  // V = (1-t)^2 s + t^2. E[x0|x] = (1-t) s x / V, E[eps|x] = t x / V and
  // v = -E[x0|x] + E[eps|x] = (t - (1-t) s) x / V.
  const double s = 0.3;
  const GaussianMixture g = single({0.0, 0.0}, s);
  for (double t : {0.05, 0.4, 0.9, 1.0}) {
    const double var = (1 - t) * (1 - t) * s + t * t;
    const Vec x{0.7, -1.1};
    const Vec v = teacher_velocity(g, NoisePath{}, x, t);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(v[i] == doctest::Approx((t - (1 - t) * s) * x[i] / var).epsilon(1e-13));
    }
  }
}

TEST_CASE("teacher_velocity: symmetric mixture at the origin at t=1 is zero") {
  const GaussianMixture g(2, {{0.5, {4.0, 0.0}, 0.25}, {0.5, {-4.0, 0.0}, 0.25}});
  const Vec v = teacher_velocity(g, NoisePath{}, Vec{0.0, 0.0}, 1.0);
  CHECK(std::abs(v[0]) < 1e-15);
  CHECK(std::abs(v[1]) < 1e-15);
}

TEST_CASE("teacher_velocity rejects t outside (0, 1]") {
  const GaussianMixture g = two_bumps();
  CHECK_THROWS_AS(teacher_velocity(g, NoisePath{}, Vec{0.0, 0.0}, 0.0), DomainError);
  CHECK_THROWS_AS(teacher_velocity(g, NoisePath{}, Vec{0.0, 0.0}, 1.1), DomainError);
}

TEST_CASE("teacher_score equals the score of the diffused marginal") {
  const GaussianMixture g = two_bumps();
  const Vec x{0.3, -0.2};
  const Vec a = teacher_score(g, NoisePath{}, x, 0.6);
  const Vec b = gmm_score(diffused_gmm(g, NoisePath{}, 0.6), x);
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-14));
}

TEST_CASE("forward_noise arithmetic") {
  const NoisePath p;
  const Vec x0{4.0, 0.0}, eps{0.0, 4.0};
  CHECK(forward_noise(p, x0, 0.0, eps) == x0);
  CHECK(forward_noise(p, x0, 1.0, eps) == eps);
  CHECK(forward_noise(p, x0, 0.25, eps) == Vec{3.0, 1.0});
}

TEST_CASE("clean and noise readouts invert forward noising under the true velocity") {
  const NoisePath p;
  const Vec x0{1.0, -2.0}, eps{0.5, 0.25};
  const double t = 0.35;
  const Vec xt = forward_noise(p, x0, t, eps);
  // Conditional velocity of the rectified path: eps - x0.
  const Vec v{eps[0] - x0[0], eps[1] - x0[1]};
  const Vec c = p.clean_readout(xt, v, t);
  const Vec n = p.noise_readout(xt, v, t);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(c[i] == doctest::Approx(x0[i]).epsilon(1e-14));
    CHECK(n[i] == doctest::Approx(eps[i]).epsilon(1e-14));
  }
}

TEST_CASE("forward noising reproduces the diffused marginal (energy test)") {
  const GaussianMixture g = two_bumps();
  const NoisePath p;
  const double t = 0.4;
  const GaussianMixture d = diffused_gmm(g, p, t);
  Rng rng(21);
  std::vector<Vec> a, b;
  Vec eps(2);
  for (int i = 0; i < 4096; ++i) {
    rng.fill_normal(eps);
    a.push_back(forward_noise(p, gmm_sample(g, rng), t, eps));
    b.push_back(gmm_sample(d, rng));
  }
  Rng perm(22);
  const double pval = energy_test_pvalue(PointSet::from_rows(a), PointSet::from_rows(b), 99, perm);
  CHECK(pval > 0.01);
}

TEST_CASE("oracle_flow_map: identity, linear closed form, ordering") {
  const double s = 0.3;
  const GaussianMixture g = single({0.0, 0.0}, s);
  const NoisePath p;
  const Vec x{0.8, -0.4};
  CHECK(oracle_flow_map(g, p, x, 0.6, 0.6, 16) == x);
  // The linear ODE dx/dt = x d/dt log sqrt(V(t)) keeps x / sqrt(V(t)) constant.
  auto sd = [&](double t) { return std::sqrt((1 - t) * (1 - t) * s + t * t); };
  const Vec y = oracle_flow_map(g, p, x, 0.9, 0.1, 32768);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(y[i] - x[i] * sd(0.1) / sd(0.9)) < 1e-4);
  }
  CHECK_THROWS_AS(oracle_flow_map(g, p, x, 0.2, 0.5, 16), DomainError);
  CHECK_THROWS_AS(oracle_flow_map(g, p, x, 0.5, 0.2, 0), DomainError);
}

TEST_CASE("oracle_flow_map composes as a semigroup") {
  const GaussianMixture g = two_bumps();
  const NoisePath p;
  Rng rng(5);
  for (int i = 0; i < 8; ++i) {
    const Vec x{rng.normal(), rng.normal()};
    const Vec direct = oracle_flow_map(g, p, x, 0.9, 0.1, 4096);
    const Vec composed =
        oracle_flow_map(g, p, oracle_flow_map(g, p, x, 0.9, 0.5, 4096), 0.5, 0.1, 4096);
    CHECK(std::sqrt(squared_distance(direct, composed)) < 1e-3);
  }
}

TEST_CASE("fine Euler transports noise onto the target") {
  const GaussianMixture g = two_bumps();
  const NoisePath p;
  Rng rng(6);
  std::vector<Vec> pushed, target, other;
  Vec z(2);
  for (int i = 0; i < 4096; ++i) {
    rng.fill_normal(z);
    pushed.push_back(oracle_flow_map(g, p, z, 1.0, kTimeFloor, 1024));
    target.push_back(gmm_sample(g, rng));
    other.push_back(gmm_sample(g, rng));
  }
  // Compared against the distance between two independent target samples.
  Rng proj(7), proj2(7);
  const PointSet t = PointSet::from_rows(target);
  const double sw = sliced_wasserstein(PointSet::from_rows(pushed), t, 64, proj);
  const double floor = sliced_wasserstein(PointSet::from_rows(other), t, 64, proj2);
  CHECK(sw < 2.0 * floor + 0.02);
}
