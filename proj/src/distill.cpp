#include "scdmd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scdmd/kernels.hpp"

namespace scdmd {
namespace {

double l2_norm(ConstSpan v) { return std::sqrt(squared_norm(v)); }

void check_finite(ConstSpan v, const char* what, std::uint64_t iter) {
  if (!all_finite(v)) {
    throw TrainingError(std::string(what) + " became non-finite at iteration " +
                        std::to_string(iter));
  }
}

double jittered(double t, double jitter, Rng& rng) {
  if (jitter <= 0.0) return t;
  return std::clamp(t + rng.uniform(-jitter, jitter), kTimeFloor, 1.0);
}

// Derivative of the clean readout with respect to the velocity at level t.
double readout_velocity_coef(const NoisePath& path, double t) {
  const double det = path.alpha(t) * path.sigma_dot(t) - path.sigma(t) * path.alpha_dot(t);
  return -path.sigma(t) / det;
}

struct GeneratorInput {
  Vec x;
  double t;
};

std::vector<GeneratorInput> sample_generator_inputs(const DistillConfig& cfg,
                                                    const VectorField& gen,
                                                    const GaussianMixture& teacher,
                                                    const NoisePath& path,
                                                    const TimestepGrid& train,
                                                    std::size_t count, Rng& rng) {
  std::vector<GeneratorInput> out;
  out.reserve(count);
  const std::size_t d = teacher.dim;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t j = rng.index(train.size());
    const double t = train.points[j];
    Vec eps(d);
    rng.fill_normal(eps);
    if (cfg.backward_simulation) {
      out.push_back({backward_simulate(gen, train, eps, {}, j, Solver::kEuler, path), t});
    } else {
      const Vec x0 = gmm_sample(teacher, rng);
      out.push_back({forward_noise(path, x0, t, eps), t});
    }
  }
  return out;
}

// Regression of both networks onto the analytic teacher.
void warmstart(DistillState& state, const GaussianMixture& teacher,
               const NoisePath& path, const TimestepGrid& train) {
  const DistillConfig& cfg = state.config;
  const std::size_t d = teacher.dim;
  MlpField gen(state.generator, d);
  MlpField critic(state.critic, d);
  Vec g_gen(state.generator.size()), g_crit(state.critic.size());
  FieldTape tape;
  for (std::size_t it = 0; it < cfg.warmstart_iters; ++it) {
    Rng rng = stream_rng(cfg.seed, Stream::kInit, it + 1);
    std::fill(g_gen.begin(), g_gen.end(), 0.0);
    std::fill(g_crit.begin(), g_crit.end(), 0.0);
    const double scale = 2.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const double t = train.points[rng.index(train.size())];
      Vec eps(d);
      rng.fill_normal(eps);
      const Vec xt = forward_noise(path, gmm_sample(teacher, rng), t, eps);

      const Vec v = gen.eval_taped(xt, t, {}, tape);
      const Vec v_ref = teacher_velocity(teacher, path, xt, t);
      Vec cot(d);
      for (std::size_t i = 0; i < d; ++i) cot[i] = scale * (v[i] - v_ref[i]);
      gen.backward(tape, cot, {}, g_gen, {});

      const Vec s = critic.eval_taped(xt, t, {}, tape);
      const Vec s_ref = teacher_score(teacher, path, xt, t);
      for (std::size_t i = 0; i < d; ++i) cot[i] = scale * (s[i] - s_ref[i]);
      critic.backward(tape, cot, {}, g_crit, {});
    }
    adamw_step(state.generator_opt, state.generator.flat(), g_gen);
    adamw_step(state.critic_opt, state.critic.flat(), g_crit);
  }
  // Warm start leaves fresh optimizer moments for distillation.
  state.generator_opt = AdamWState(state.generator.size(), cfg.generator_opt);
  state.critic_opt = AdamWState(state.critic.size(), cfg.critic_opt);
}

}  // namespace

LossAndGrad critic_dsm_loss(const TrainableField& critic, const NoisePath& path,
                            std::span<const DsmSample> batch) {
  if (batch.empty()) throw DomainError("critic_dsm_loss: empty batch");
  LossAndGrad out{0.0, Vec(critic.param_count(), 0.0)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  FieldTape tape;
  for (const DsmSample& s : batch) {
    const double sig = path.sigma(s.t);
    if (!(sig > 0.0)) throw DomainError("critic_dsm_loss: sigma(t) must be > 0");
    const Vec xt = forward_noise(path, s.x0, s.t, s.eps);
    const Vec score = critic.eval_taped(xt, s.t, s.context, tape);
    Vec cot(score.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
      const double r = score[i] + s.eps[i] / sig;
      sq += r * r;
      cot[i] = 2.0 * scale * r;
    }
    out.loss += scale * sq;
    critic.backward(tape, cot, {}, out.grad, {});
  }
  return out;
}

LossAndGrad critic_dsm_loss(const TrainableField& critic, const NoisePath& path,
                            const std::vector<Vec>& x0_batch,
                            const std::vector<Vec>& contexts,
                            const TimestepGrid& levels, double jitter, Rng& rng) {
  std::vector<DsmSample> batch;
  batch.reserve(x0_batch.size());
  for (std::size_t b = 0; b < x0_batch.size(); ++b) {
    DsmSample s;
    s.x0 = x0_batch[b];
    if (!contexts.empty()) s.context = contexts[b];
    s.t = jittered(levels.points[rng.index(levels.size())], jitter, rng);
    s.eps.resize(s.x0.size());
    rng.fill_normal(s.eps);
    batch.push_back(std::move(s));
  }
  return critic_dsm_loss(critic, path, batch);
}

Vec generator_clean(const VectorField& generator, const NoisePath& path,
                    ConstSpan x_in, double t_in, ConstSpan context) {
  const Vec v = generator.eval(x_in, t_in, context);
  return path.clean_readout(x_in, v, t_in);
}

DmdGradient dmd_generator_grad(const TrainableField& generator,
                               const VectorField& critic, const NoisePath& path,
                               std::span<const DmdSample> batch,
                               DmdNormalization normalization) {
  if (batch.empty()) throw DomainError("dmd_generator_grad: empty batch");
  DmdGradient out;
  out.grad.assign(generator.param_count(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  FieldTape tape;
  for (const DmdSample& s : batch) {
    if (!s.target) throw DomainError("dmd_generator_grad: sample without target");
    const Vec v = generator.eval_taped(s.x_in, s.t_in, s.context, tape);
    const Vec x0 = path.clean_readout(s.x_in, v, s.t_in);
    Vec xt = forward_noise(path, x0, s.t, s.eps);
    const Vec s_fake = critic.eval(xt, s.t, s.context);
    const Vec s_real = teacher_score(*s.target, path, xt, s.t);
    const std::size_t d = xt.size();
    Vec w(d);
    double l1 = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      w[i] = s_fake[i] - s_real[i];
      l1 += std::abs(w[i]);
      sq += w[i] * w[i];
    }
    if (!std::isfinite(sq)) {
      throw TrainingError("dmd_generator_grad: non-finite score difference at t=" +
                          std::to_string(s.t));
    }
    if (normalization == DmdNormalization::kL1) {
      const double c = static_cast<double>(d) / (l1 + 1e-6);
      for (double& x : w) x *= c;
    }
    out.score_mismatch += scale * sq;
    // dx_t/dv = alpha(t) * d(x0)/dv
    const double coef = scale * path.alpha(s.t) * readout_velocity_coef(path, s.t_in);
    Vec cot(d);
    for (std::size_t i = 0; i < d; ++i) cot[i] = coef * w[i];
    generator.backward(tape, cot, {}, out.grad, {});
    out.cotangents.push_back(std::move(w));
    out.x_t.push_back(std::move(xt));
  }
  return out;
}

Vec backward_simulate(const VectorField& generator, const TimestepGrid& grid,
                      ConstSpan noise, ConstSpan context, std::size_t stop_index,
                      Solver solver, const NoisePath& path, Rng* renoise) {
  if (stop_index > grid.size()) {
    throw DomainError("backward_simulate: stop_index beyond the grid");
  }
  Vec x(noise.begin(), noise.end());
  for (std::size_t i = 0; i < stop_index; ++i) {
    const double t = grid.points[i];
    const double t_next = grid.next(i);
    const Vec v = generator.eval(x, t, context);
    if (i + 1 == grid.size()) {
      x = path.clean_readout(x, v, t);
    } else if (solver == Solver::kEuler) {
      const double h = t - t_next;
      for (std::size_t j = 0; j < x.size(); ++j) x[j] -= h * v[j];
    } else {
      const Vec x0 = path.clean_readout(x, v, t);
      Vec eps;
      if (renoise) {
        eps.resize(x.size());
        renoise->fill_normal(eps);
      } else {
        eps = path.noise_readout(x, v, t);
      }
      x = forward_noise(path, x0, t_next, eps);
    }
  }
  return x;
}

DistillState init_distill_state(const DistillConfig& config, std::size_t dim) {
  Rng rng = stream_rng(config.seed, Stream::kInit);
  DistillState state;
  state.config = config;
  const MlpSpec gen_spec =
      MlpField::make_spec(dim, 0, config.generator_hidden, config.activation);
  const MlpSpec critic_spec =
      MlpField::make_spec(dim, 0, config.critic_hidden, config.activation);
  state.generator = MlpParams::glorot(gen_spec, rng);
  state.critic = MlpParams::glorot(critic_spec, rng);
  state.generator_opt = AdamWState(state.generator.size(), config.generator_opt);
  state.critic_opt = AdamWState(state.critic.size(), config.critic_opt);
  return state;
}

void train_nonar(DistillState& state, const GaussianMixture& teacher,
                 MetricsSink& sink, const TrainHooks& hooks) {
  const DistillConfig& cfg = state.config;
  teacher.validate();
  if (cfg.batch_size == 0 || cfg.critic_updates_per_gen_update == 0) {
    throw DomainError("train_nonar: batch size and critic updates must be >= 1");
  }
  const NoisePath path;
  const TimestepGrid train =
      make_grid(cfg.train_grid.points, cfg.train_grid.shift, GridKind::kTraining);
  const TimestepGrid infer =
      make_grid(cfg.infer_grid.points, cfg.infer_grid.shift, GridKind::kInference);
  const TimestepGrid sc_ends = cfg.sc_terminal_anchor ? with_terminal(infer) : infer;
  const std::size_t d = teacher.dim;

  if (state.step == 0 && cfg.warmstart_iters > 0) warmstart(state, teacher, path, train);

  MlpField gen(state.generator, d);
  MlpField critic(state.critic, d);

  std::vector<Vec> eval_noises;
  if (cfg.eval_every > 0) {
    Rng er = stream_rng(cfg.seed, Stream::kEval);
    eval_noises.assign(cfg.eval_samples, Vec(d));
    for (Vec& z : eval_noises) er.fill_normal(z);
  }

  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::uint64_t it = state.step; it < cfg.iterations; ++it) {
    const DistillState last_good = state;
    try {
      // Critic: denoising score matching on fresh generator samples.
      Rng rc = stream_rng(cfg.seed, Stream::kCritic, it);
      double critic_loss = 0.0, critic_grad_norm = 0.0;
      for (std::size_t u = 0; u < cfg.critic_updates_per_gen_update; ++u) {
        const auto inputs =
            sample_generator_inputs(cfg, gen, teacher, path, train, cfg.batch_size, rc);
        std::vector<Vec> x0s;
        x0s.reserve(inputs.size());
        for (const auto& in : inputs) x0s.push_back(generator_clean(gen, path, in.x, in.t));
        const LossAndGrad lg = critic_dsm_loss(critic, path, x0s, {}, train, cfg.t_jitter, rc);
        check_finite(lg.grad, "critic gradient", it);
        adamw_step(state.critic_opt, state.critic.flat(), lg.grad);
        critic_loss = lg.loss;
        critic_grad_norm = l2_norm(lg.grad);
      }

      // Generator: DMD direction plus the self-consistency gradient.
      Rng rg = stream_rng(cfg.seed, Stream::kGenerator, it);
      const auto inputs =
          sample_generator_inputs(cfg, gen, teacher, path, train, cfg.batch_size, rg);
      std::vector<DmdSample> batch;
      batch.reserve(inputs.size());
      for (const auto& in : inputs) {
        DmdSample s;
        s.x_in = in.x;
        s.t_in = in.t;
        s.target = &teacher;
        s.t = jittered(train.points[rg.index(train.size())], cfg.t_jitter, rg);
        s.eps.resize(d);
        rg.fill_normal(s.eps);
        batch.push_back(std::move(s));
      }
      DmdGradient dmd = dmd_generator_grad(gen, critic, path, batch, cfg.dmd_normalization);
      check_finite(dmd.grad, "dmd gradient", it);
      Vec total = dmd.grad;
      const double dmd_grad_norm = l2_norm(dmd.grad);

      double sc_loss_value = 0.0, sc_grad_norm = 0.0, sc_active = 0.0;
      if (cfg.objective == Objective::kScDmd) {
        Rng rs = stream_rng(cfg.seed, Stream::kSelfConsistency, it);
        Vec sc_grad(state.generator.size(), 0.0);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
          const double t_s = train.points[rs.index(train.size())];
          const auto triple = sample_triple(rs, t_s, train, sc_ends);
          if (!triple) continue;  // empty candidate set: zero contribution
          Vec eps(d);
          rs.fill_normal(eps);
          Vec x_s;
          if (cfg.backward_simulation) {
            std::size_t j = 0;
            while (train.points[j] != t_s) ++j;
            x_s = backward_simulate(gen, train, eps, {}, j, Solver::kEuler, path);
          } else {
            x_s = forward_noise(path, gmm_sample(teacher, rs), t_s, eps);
          }
          sc_loss_value +=
              inv_b * sc_loss_sample(gen, x_s, *triple, {}, cfg.sc_detach, sc_grad, inv_b);
          sc_active += inv_b;
        }
        check_finite(sc_grad, "sc gradient", it);
        sc_grad_norm = l2_norm(sc_grad);
        if (cfg.lambda_sc != 0.0) {
          kernels::active().axpy(cfg.lambda_sc, sc_grad.data(), total.data(), total.size());
        }
      }
      if (!std::isfinite(dmd.score_mismatch) || !std::isfinite(sc_loss_value) ||
          !std::isfinite(critic_loss)) {
        throw TrainingError("non-finite loss at iteration " + std::to_string(it));
      }
      adamw_step(state.generator_opt, state.generator.flat(), total);
      state.step = it + 1;

      json rec;
      rec["iter"] = it;
      rec["loss_dmd"] = dmd.score_mismatch;
      rec["loss_sc"] = sc_loss_value;
      rec["loss_critic"] = critic_loss;
      rec["sc_active"] = sc_active;
      rec["grad_norms"] = {{"generator", l2_norm(total)},
                           {"dmd", dmd_grad_norm},
                           {"sc", sc_grad_norm},
                           {"critic", critic_grad_norm}};
      if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) {
        const DefectReport rep = evaluate_defect_path(gen, infer, train, eval_noises, {},
                                                      cfg.defect_epsilon);
        rec["defect_eval"] = {{"path_average", rep.path_average},
                              {"intervals", rep.interval_means}};
      }
      sink.write(std::move(rec));
      if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
          (it + 1) % cfg.checkpoint_every == 0) {
        hooks.on_checkpoint(state);
      }
    } catch (const TrainingError&) {
      state = last_good;
      throw;
    } catch (const OptimizerError& e) {
      state = last_good;
      throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(it));
    }
  }
}

std::pair<DistillState, MetricsLog> train_nonar(const DistillConfig& config,
                                                const GaussianMixture& teacher) {
  DistillState state = init_distill_state(config, teacher.dim);
  MetricsLog log;
  train_nonar(state, teacher, log);
  return {std::move(state), std::move(log)};
}

}  // namespace scdmd
