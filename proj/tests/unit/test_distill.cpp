#include <doctest.h>

#include <bit>
#include <cmath>

#include "scdmd/config.hpp"
#include "scdmd/distill.hpp"
#include "scdmd/stats.hpp"

using namespace scdmd;

namespace {

MlpParams random_net(const MlpSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return MlpParams::glorot(spec, rng);
}

GaussianMixture gauss2(Vec mean, double var) { return GaussianMixture(2, {{1.0, std::move(mean), var}}); }

std::vector<DmdSample> dmd_batch(const GaussianMixture* target, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DmdSample> batch(n);
  for (DmdSample& s : batch) {
    s.x_in = {rng.normal(), rng.normal()};
    s.t_in = 1.0;
    s.target = target;
    s.t = rng.uniform(0.1, 0.95);
    s.eps = {rng.normal(), rng.normal()};
  }
  return batch;
}

}  // namespace

TEST_CASE("critic_dsm_loss: zero network gives mean ||eps / sigma||^2") {
  const MlpSpec spec = MlpField::make_spec(2, 0, {8});
  const MlpParams zero(spec);
  const MlpField critic(zero, 2);
  const NoisePath path;
  Rng rng(1);
  std::vector<DsmSample> batch(4096);
  double direct = 0.0;
  for (DsmSample& s : batch) {
    s.x0 = {rng.normal(), rng.normal()};
    s.t = rng.uniform(0.2, 1.0);
    s.eps = {rng.normal(), rng.normal()};
    direct += squared_norm(s.eps) / (s.t * s.t) / batch.size();
  }
  const LossAndGrad lg = critic_dsm_loss(critic, path, batch);
  CHECK(lg.loss == doctest::Approx(direct).epsilon(1e-12));
  // Monte-Carlo check of E||eps||^2 / t^2 = 2 E[1/t^2] for t ~ U(0.2, 1): 2 * 5 = 10.
  double sq = 0.0;
  for (const DsmSample& s : batch) {
    const double v = squared_norm(s.eps) / (s.t * s.t);
    sq += v * v / batch.size();
  }
  const double se = std::sqrt((sq - direct * direct) / batch.size());
  CHECK(std::abs(lg.loss - 10.0) < 3 * se);
}

TEST_CASE("critic_dsm_loss is non-negative and its gradient matches finite differences") {
  const MlpSpec spec = MlpField::make_spec(2, 0, {6, 6});
  MlpParams params = random_net(spec, 2);
  const MlpField critic(params, 2);
  const NoisePath path;
  Rng rng(3);
  std::vector<DsmSample> batch(8);
  for (DsmSample& s : batch) {
    s.x0 = {rng.normal(), rng.normal()};
    s.t = rng.uniform(0.2, 1.0);
    s.eps = {rng.normal(), rng.normal()};
  }
  const LossAndGrad lg = critic_dsm_loss(critic, path, batch);
  CHECK(lg.loss >= 0.0);
  const double h = 1e-5;
  for (std::size_t k = 0; k < params.size(); k += 7) {
    double& p = params.flat()[k];
    const double p0 = p;
    p = p0 + h;
    const double up = critic_dsm_loss(critic, path, batch).loss;
    p = p0 - h;
    const double down = critic_dsm_loss(critic, path, batch).loss;
    p = p0;
    const double fd = (up - down) / (2 * h);
    CHECK(std::abs(fd - lg.grad[k]) <= 1e-4 * std::max(std::abs(fd), 1e-6));
  }
}

TEST_CASE("critic trained on a point mass learns -x / sigma^2") {
  const MlpSpec spec = MlpField::make_spec(2, 0, {32, 32});
  MlpParams params = random_net(spec, 4);
  const MlpField critic(params, 2);
  AdamWState opt(params.size(), AdamWHyper{1e-2, 0.9, 0.999, 1e-8, 0.0});
  const NoisePath path;
  const double t = 0.5;
  Rng rng(5);
  std::vector<DsmSample> batch(128);
  for (int it = 0; it < 1500; ++it) {
    for (DsmSample& s : batch) {
      s.x0 = {0.0, 0.0};
      s.t = t;
      s.eps = {rng.normal(), rng.normal()};
    }
    adamw_step(opt, params.flat(), critic_dsm_loss(critic, path, batch).grad);
  }
  for (const Vec& probe : {Vec{0.3, 0.0}, Vec{-0.4, 0.2}, Vec{0.1, -0.5}, Vec{0.6, 0.6}}) {
    const Vec s = critic.eval(probe, t, {});
    const double want_norm = std::sqrt(squared_norm(probe)) / (t * t);
    const Vec want{-probe[0] / (t * t), -probe[1] / (t * t)};
    CHECK(std::sqrt(squared_distance(s, want)) < 0.1 * want_norm);
  }
}

TEST_CASE("dmd_generator_grad vanishes when the critic equals the teacher score") {
  const GaussianMixture target(2, {{0.5, {1.0, 0.0}, 0.3}, {0.5, {-1.0, 0.5}, 0.2}});
  const MlpSpec spec = MlpField::make_spec(2, 0, {8});
  const MlpParams params = random_net(spec, 6);
  const MlpField gen(params, 2);
  const NoisePath path;
  FunctionField oracle(2, [&](ConstSpan x, double t, ConstSpan) {
    return teacher_score(target, path, x, t);
  });
  const auto batch = dmd_batch(&target, 16, 7);
  for (auto norm : {DmdNormalization::kL1, DmdNormalization::kNone}) {
    const DmdGradient g = dmd_generator_grad(gen, oracle, path, batch, norm);
    CHECK(std::sqrt(squared_norm(g.grad)) < 1e-6);
    CHECK(g.score_mismatch == 0.0);
  }
}

TEST_CASE("dmd_generator_grad moves a linear generator toward the real mean") {
  const Vec m_r{2.0, -1.0}, m_f{0.0, 0.0};
  const GaussianMixture target = gauss2(m_r, 1.0);
  // Linear generator from (x, time embedding) with zero weights: it outputs
  // v = b, so the clean readout x_in - b has mean -b = m_f = 0.
  const MlpSpec spec = MlpField::make_spec(2, 0, {});
  MlpParams params(spec);
  const MlpField gen(params, 2);
  const NoisePath path;
  // Fake and real both have unit variance after diffusion with variance 1,
  // so the score difference is the constant (m_r - m_f) alpha / 1.
  FunctionField fake(2, [&](ConstSpan x, double t, ConstSpan) {
    return gmm_score(diffused_gmm(gauss2(m_f, 1.0), path, t), x);
  });
  const auto batch = dmd_batch(&target, 64, 8);
  const DmdGradient g = dmd_generator_grad(gen, fake, path, batch, DmdNormalization::kNone);
  auto mean_out = [&] {
    Vec m(2, 0.0);
    for (const auto& s : batch) {
      const Vec x0 = generator_clean(gen, path, s.x_in, s.t_in);
      m[0] += x0[0] / batch.size();
      m[1] += x0[1] / batch.size();
    }
    return m;
  };
  const double before = squared_distance(mean_out(), m_r);
  for (std::size_t k = 0; k < params.size(); ++k) params.flat()[k] -= 0.05 * g.grad[k];
  CHECK(squared_distance(mean_out(), m_r) < before);
}

TEST_CASE("dmd_generator_grad equals the gradient of the stop-gradient surrogate") {
  const GaussianMixture target(2, {{0.5, {1.5, 0.0}, 0.2}, {0.5, {-1.5, 0.0}, 0.2}});
  const MlpSpec gspec = MlpField::make_spec(2, 0, {8, 8});
  MlpParams gp = random_net(gspec, 9);
  const MlpField gen(gp, 2);
  const MlpSpec cspec = MlpField::make_spec(2, 0, {8});
  const MlpParams cp = random_net(cspec, 10);
  const MlpField critic(cp, 2);
  const NoisePath path;
  const auto batch = dmd_batch(&target, 6, 11);
  for (auto norm : {DmdNormalization::kL1, DmdNormalization::kNone}) {
    const DmdGradient g = dmd_generator_grad(gen, critic, path, batch, norm);
    // Target of the surrogate: x_t(theta) - w, frozen at the current theta.
    std::vector<Vec> frozen(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) frozen[b] = subtract(g.x_t[b], g.cotangents[b]);
    auto surrogate = [&] {
      double l = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = batch[b];
        const Vec xt = forward_noise(path, generator_clean(gen, path, s.x_in, s.t_in), s.t, s.eps);
        l += 0.5 * squared_distance(xt, frozen[b]) / batch.size();
      }
      return l;
    };
    const double h = 1e-5;
    for (std::size_t k = 0; k < gp.size(); k += 3) {
      double& p = gp.flat()[k];
      const double p0 = p;
      p = p0 + h;
      const double up = surrogate();
      p = p0 - h;
      const double down = surrogate();
      p = p0;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - g.grad[k]) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("backward_simulate endpoints") {
  FunctionField f(2, [](ConstSpan x, double t, ConstSpan) { return Vec{x[1] * t, -x[0]}; });
  const TimestepGrid g = make_grid(4, 12.0, GridKind::kTraining);
  const Vec z{0.4, -0.8};
  CHECK(backward_simulate(f, g, z, {}, 0) == z);
  CHECK(backward_simulate(f, g, z, {}, g.size()) == sample_k_steps(f, g, z).final_state());
  CHECK_THROWS_AS(backward_simulate(f, g, z, {}, g.size() + 1), DomainError);
}

TEST_CASE("backward-simulated states of an exact student follow the diffused marginal") {
  const GaussianMixture target = gauss2({1.0, -0.5}, 0.3);
  const TeacherVelocityField v(target);
  const TimestepGrid g = make_grid(256, 1.0, GridKind::kTraining);
  const std::size_t stop = 128;
  const double t = g.points[stop];
  const GaussianMixture marg = diffused_gmm(target, NoisePath{}, t);
  Rng rng(12);
  std::vector<Vec> sim, ref;
  Vec z(2);
  for (int i = 0; i < 2048; ++i) {
    rng.fill_normal(z);
    sim.push_back(backward_simulate(v, g, z, {}, stop));
    ref.push_back(gmm_sample(marg, rng));
  }
  Rng perm(13);
  CHECK(energy_test_pvalue(PointSet::from_rows(sim), PointSet::from_rows(ref), 99, perm) > 0.01);
}

TEST_CASE("train_nonar: lambda_sc = 0 reproduces the DMD-only run bit for bit") {
  DistillConfig c;
  c.iterations = 40;
  c.warmstart_iters = 20;
  c.batch_size = 16;
  c.seed = 3;
  c.lambda_sc = 0.0;
  c.objective = Objective::kScDmd;
  DistillConfig d = c;
  d.objective = Objective::kDmd;
  const GaussianMixture teacher = default_nonar_teacher();
  const auto [sa, la] = train_nonar(c, teacher);
  const auto [sb, lb] = train_nonar(d, teacher);
  const Vec pa = flatten_params(sa.generator), pb = flatten_params(sb.generator);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(pa[i]) == std::bit_cast<std::uint64_t>(pb[i]));
  }
  REQUIRE(la.records().size() == lb.records().size());
  for (std::size_t i = 0; i < la.records().size(); ++i) {
    CHECK(la.records()[i]["loss_dmd"] == lb.records()[i]["loss_dmd"]);
  }
}

TEST_CASE("train_nonar: 4-step samples cover both modes and every logged loss is finite") {
  DistillConfig c;
  c.seed = 1;
  const GaussianMixture teacher = default_nonar_teacher();
  const auto [state, log] = train_nonar(c, teacher);
  CHECK(state.step == c.iterations);
  for (const json& r : log.records()) {
    CHECK(std::isfinite(r["loss_dmd"].get<double>()));
    CHECK(std::isfinite(r["loss_sc"].get<double>()));
    CHECK(std::isfinite(r["loss_critic"].get<double>()));
  }
  const MlpField gen(state.generator, 2);
  const TimestepGrid g = make_grid(4, c.infer_grid.shift, GridKind::kInference);
  Rng rng(99);
  int right = 0;
  const int n = 2000;
  Vec z(2);
  for (int i = 0; i < n; ++i) {
    rng.fill_normal(z);
    right += sample_k_steps(gen, g, z).final_state()[0] > 0.0;
  }
  CHECK(right >= 0.3 * n);
  CHECK(n - right >= 0.3 * n);
}
