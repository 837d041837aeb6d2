#include "scdmd/ar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "scdmd/kernels.hpp"
#include "scdmd/stats.hpp"

namespace scdmd {
namespace {

double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

double l2_norm(ConstSpan v) { return std::sqrt(squared_norm(v)); }

void check_finite(ConstSpan v, const char* what, std::uint64_t iter) {
  if (!all_finite(v)) {
    throw TrainingError(std::string(what) + " became non-finite at iteration " +
                        std::to_string(iter));
  }
}

double readout_velocity_coef(const NoisePath& path, double t) {
  const double det = path.alpha(t) * path.sigma_dot(t) - path.sigma(t) * path.alpha_dot(t);
  return -path.sigma(t) / det;
}

Vec advanced_layout(const ToyProcessSpec& spec, double anchor, double direction) {
  Vec out;
  out.reserve(spec.chunk_dim());
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const double a = anchor + direction * spec.angular_step * static_cast<double>(f + 1);
    const Vec frame = frame_layout(spec, a);
    out.insert(out.end(), frame.begin(), frame.end());
  }
  return out;
}

GaussianMixture direction_mixture(const ToyProcessSpec& spec, double anchor) {
  const double var = spec.noise * spec.noise;
  return GaussianMixture(spec.chunk_dim(),
                         {{0.5, advanced_layout(spec, anchor, 1.0), var},
                          {0.5, advanced_layout(spec, anchor, -1.0), var}});
}

}  // namespace

// ---------------------------------------------------------------------------
// Toy process

void ToyProcessSpec::validate() const {
  if (channels != 2) throw ConfigError("toy process: channels must be 2");
  if (n_chunks == 0 || frames == 0 || tokens == 0 || memory == 0) {
    throw ConfigError("toy process: counts must be >= 1");
  }
  if (!(noise > 0.0)) throw ConfigError("toy process: noise must be > 0");
  if (offsets.size() != tokens) {
    throw ConfigError("toy process: need one offset per token");
  }
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    for (std::size_t j = i + 1; j < offsets.size(); ++j) {
      if (offsets[i] == offsets[j]) throw ConfigError("toy process: offsets must be distinct");
    }
  }
}

ChunkContext ChunkContext::initial(const ToyProcessSpec& spec) {
  ChunkContext c;
  c.buffer.assign(spec.memory, Vec(spec.chunk_dim(), 0.0));
  return c;
}

ChunkContext ChunkContext::advanced(ConstSpan chunk) const {
  if (buffer.empty()) throw ShapeError("chunk context: empty buffer");
  require_size(chunk, buffer.front().size(), "chunk");
  ChunkContext out;
  out.buffer.reserve(buffer.size());
  for (std::size_t i = 1; i < buffer.size(); ++i) out.buffer.push_back(buffer[i]);
  out.buffer.emplace_back(chunk.begin(), chunk.end());
  out.chunk_index = chunk_index + 1;
  return out;
}

std::size_t ChunkContext::filled() const { return std::min(chunk_index, buffer.size()); }

Vec ChunkContext::flat() const {
  Vec out;
  for (const Vec& c : buffer) out.insert(out.end(), c.begin(), c.end());
  return out;
}

ChunkContext context_from_flat(const ToyProcessSpec& spec, ConstSpan flat) {
  require_size(flat, spec.context_dim(), "flat context");
  const std::size_t n = spec.chunk_dim();
  ChunkContext ctx = ChunkContext::initial(spec);
  std::size_t filled = 0;
  for (std::size_t m = 0; m < spec.memory; ++m) {
    const ConstSpan slot = flat.subspan(m * n, n);
    if (std::any_of(slot.begin(), slot.end(), [](double v) { return v != 0.0; })) ++filled;
    ctx.buffer[m].assign(slot.begin(), slot.end());
  }
  ctx.chunk_index = filled;
  return ctx;
}

Vec frame_layout(const ToyProcessSpec& spec, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Vec out(spec.tokens * 2);
  for (std::size_t k = 0; k < spec.tokens; ++k) {
    const auto& o = spec.offsets[k];
    out[2 * k] = c + c * o[0] - s * o[1];
    out[2 * k + 1] = s + s * o[0] + c * o[1];
  }
  return out;
}

std::vector<double> frame_angles(const ToyProcessSpec& spec, ConstSpan chunk) {
  require_size(chunk, spec.chunk_dim(), "chunk");
  std::vector<double> out(spec.frames);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    double cx = 0.0, cy = 0.0;
    for (std::size_t k = 0; k < spec.tokens; ++k) {
      cx += chunk[(f * spec.tokens + k) * 2];
      cy += chunk[(f * spec.tokens + k) * 2 + 1];
    }
    out[f] = std::atan2(cy, cx);
  }
  return out;
}

GaussianMixture toy_conditional_teacher(const ToyProcessSpec& spec,
                                        const ChunkContext& context) {
  const std::size_t filled = context.filled();
  std::vector<double> angles;
  // The start angle acts as a frame just before the first chunk.
  if (context.chunk_index == filled) angles.push_back(spec.start_angle);
  for (std::size_t i = context.buffer.size() - filled; i < context.buffer.size(); ++i) {
    const auto a = frame_angles(spec, context.buffer[i]);
    angles.insert(angles.end(), a.begin(), a.end());
  }
  const double anchor = angles.back();
  if (angles.size() < 2) return direction_mixture(spec, anchor);
  const double diff = wrap_angle(angles[angles.size() - 1] - angles[angles.size() - 2]);
  if (diff == 0.0) return direction_mixture(spec, anchor);
  const double direction = diff > 0.0 ? 1.0 : -1.0;
  return GaussianMixture(spec.chunk_dim(),
                         {{1.0, advanced_layout(spec, anchor, direction),
                           spec.noise * spec.noise}});
}

std::vector<Vec> sample_toy_sequence(const ToyProcessSpec& spec, std::size_t n_chunks,
                                     Rng& rng) {
  std::vector<Vec> out;
  out.reserve(n_chunks);
  ChunkContext ctx = ChunkContext::initial(spec);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.push_back(gmm_sample(toy_conditional_teacher(spec, ctx), rng));
    ctx = ctx.advanced(out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token network

TokenMlpField::TokenMlpField(const MlpParams& params, const ToyProcessSpec& spec)
    : params_(&params), spec_(spec) {
  const MlpSpec expected = make_spec(spec, {}, params.spec().activation);
  if (params.spec().input_dim != expected.input_dim ||
      params.spec().output_dim != spec.channels) {
    throw ShapeError("token field: network spec does not match the toy process");
  }
}

MlpSpec TokenMlpField::make_spec(const ToyProcessSpec& spec,
                                 std::vector<std::size_t> hidden, Activation activation) {
  const std::size_t in = spec.channels + spec.chunk_dim() + spec.frames + spec.tokens +
                         kTimeEmbeddingDim + spec.context_dim() + spec.channels;
  return MlpSpec::make(in, std::move(hidden), spec.channels, activation);
}

Vec TokenMlpField::eval_taped(ConstSpan x, double t, ConstSpan context,
                              FieldTape& tape) const {
  const std::size_t n = spec_.chunk_dim(), dch = spec_.channels;
  require_size(x, n, "token field state");
  require_size(context, spec_.context_dim(), "token field context");
  const MlpSpec& ms = params_->spec();
  thread_local Vec input;
  input.assign(ms.input_dim, 0.0);
  // Shared part: chunk state, time embedding and context.
  const std::size_t pos = dch + n;
  const std::size_t temb = pos + spec_.frames + spec_.tokens;
  std::copy(x.begin(), x.end(), input.begin() + static_cast<std::ptrdiff_t>(dch));
  time_embedding(t, input.data() + temb);
  std::copy(context.begin(), context.end(),
            input.begin() + static_cast<std::ptrdiff_t>(temb + kTimeEmbeddingDim));

  const std::size_t rows = feature_rows();
  tape.nets.resize(rows);
  tape.features.clear();
  Vec out(n);
  for (std::size_t f = 0; f < spec_.frames; ++f) {
    for (std::size_t s = 0; s < spec_.tokens; ++s) {
      const std::size_t k = f * spec_.tokens + s;
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(k * dch),
                x.begin() + static_cast<std::ptrdiff_t>((k + 1) * dch), input.begin());
      std::fill(input.begin() + static_cast<std::ptrdiff_t>(pos),
                input.begin() + static_cast<std::ptrdiff_t>(temb), 0.0);
      input[pos + f] = 1.0;
      input[pos + spec_.frames + s] = 1.0;
      // Same token of the newest frame in the context buffer.
      const std::size_t look = (spec_.memory - 1) * n + ((spec_.frames - 1) * spec_.tokens + s) * dch;
      std::copy(context.begin() + static_cast<std::ptrdiff_t>(look),
                context.begin() + static_cast<std::ptrdiff_t>(look + dch),
                input.end() - static_cast<std::ptrdiff_t>(dch));
      mlp_forward_taped(ms, *params_, input, tape.nets[k]);
      std::copy(tape.nets[k].output.begin(), tape.nets[k].output.end(),
                out.begin() + static_cast<std::ptrdiff_t>(k * dch));
      const ConstSpan feat = tape.nets[k].features(ms);
      tape.features.insert(tape.features.end(), feat.begin(), feat.end());
    }
  }
  return out;
}

void TokenMlpField::backward(const FieldTape& tape, ConstSpan cotangent,
                             ConstSpan feature_cotangent, MutSpan param_grad,
                             MutSpan x_grad) const {
  const std::size_t n = spec_.chunk_dim(), dch = spec_.channels;
  const std::size_t rows = feature_rows(), h = feature_dim();
  require_size(cotangent, n, "token field cotangent");
  if (!feature_cotangent.empty()) require_size(feature_cotangent, rows * h, "feature cotangent");
  if (!x_grad.empty()) require_size(x_grad, n, "token field x grad");
  const MlpSpec& ms = params_->spec();
  thread_local Vec input_grad;
  for (std::size_t k = 0; k < rows; ++k) {
    const ConstSpan cot = cotangent.subspan(k * dch, dch);
    const ConstSpan fcot =
        feature_cotangent.empty() ? ConstSpan{} : feature_cotangent.subspan(k * h, h);
    if (x_grad.empty()) {
      mlp_backward_taped(ms, *params_, tape.nets[k], cot, fcot, param_grad, {});
      continue;
    }
    input_grad.assign(ms.input_dim, 0.0);
    mlp_backward_taped(ms, *params_, tape.nets[k], cot, fcot, param_grad, input_grad);
    for (std::size_t i = 0; i < dch; ++i) x_grad[k * dch + i] += input_grad[i];
    for (std::size_t i = 0; i < n; ++i) x_grad[i] += input_grad[dch + i];
  }
}

FeatureBlock TokenMlpField::feature_block(const FieldTape& tape, double t_f) const {
  return FeatureBlock(spec_.frames, spec_.tokens, feature_dim(), tape.features, t_f);
}

// ---------------------------------------------------------------------------
// Rollouts

ChunkRollout rollout_chunk(const VectorField& generator, const ChunkContext& context,
                           const TimestepGrid& grid, ConstSpan noise, Solver solver,
                           Rng* renoise) {
  const Vec ctx = context.flat();
  ChunkRollout out;
  out.trace = sample_k_steps(generator, grid, noise, ctx, solver, NoisePath{}, renoise);
  out.chunk = out.trace.final_state();
  return out;
}

std::vector<Vec> rollout_sequence(const VectorField& generator, const ToyProcessSpec& spec,
                                  const TimestepGrid& grid, std::size_t n_chunks, Rng& rng) {
  std::vector<Vec> out;
  out.reserve(n_chunks);
  ChunkContext ctx = ChunkContext::initial(spec);
  Vec z(spec.chunk_dim());
  for (std::size_t c = 0; c < n_chunks; ++c) {
    rng.fill_normal(z);
    out.push_back(backward_simulate(generator, grid, z, ctx.flat(), grid.size()));
    ctx = ctx.advanced(out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mixed-step configuration

void MixedStepConfig::validate() const {
  if (step_counts.empty() || step_counts.size() != probabilities.size()) {
    throw ConfigError("mixed step: step_counts and probabilities must match");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < step_counts.size(); ++i) {
    if (step_counts[i] == 0) throw ConfigError("mixed step: step counts must be >= 1");
    if (!(probabilities[i] >= 0.0)) throw ConfigError("mixed step: negative probability");
    total += probabilities[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixed step: probabilities must sum to 1");
  if (lambda_sc < 0.0 || lambda_align < 0.0) throw ConfigError("mixed step: negative weight");
  if (align_apply_prob < 0.0 || align_apply_prob > 1.0) {
    throw ConfigError("mixed step: align_apply_prob must lie in [0, 1]");
  }
  if (align_delta < 0.0) throw ConfigError("mixed step: align_delta must be >= 0");
}

std::size_t MixedStepConfig::warmup(std::size_t iterations) const {
  return align_warmup_iters ? *align_warmup_iters : iterations / 4;
}

std::size_t sample_step_count(const MixedStepConfig& config, Rng& rng) {
  if (config.fixed_k != 0) return config.fixed_k;
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < config.step_counts.size(); ++i) {
    acc += config.probabilities[i];
    if (u < acc) return config.step_counts[i];
  }
  return config.step_counts.back();
}

std::size_t reference_step_count(std::size_t k) {
  return (k == 2 || k == 4) ? 2 * k : 0;
}

ArConfig ArConfig::defaults() {
  ArConfig c;
  c.distill.backward_simulation = true;
  c.distill.batch_size = 32;
  c.distill.iterations = 3000;
  c.distill.warmstart_iters = 500;
  return c;
}

// ---------------------------------------------------------------------------
// Training

DistillState init_ar_state(const ArConfig& config) {
  config.toy.validate();
  config.mixed.validate();
  const DistillConfig& dc = config.distill;
  Rng rng = stream_rng(dc.seed, Stream::kInit);
  DistillState state;
  state.config = dc;
  state.generator =
      MlpParams::glorot(TokenMlpField::make_spec(config.toy, dc.generator_hidden, dc.activation), rng);
  state.critic = MlpParams::glorot(
      MlpField::make_spec(config.toy.chunk_dim(), config.toy.context_dim(), dc.critic_hidden,
                          dc.activation),
      rng);
  state.generator_opt = AdamWState(state.generator.size(), dc.generator_opt);
  state.critic_opt = AdamWState(state.critic.size(), dc.critic_opt);
  return state;
}

namespace {


struct ChunkSample {
  ChunkContext context;
  Vec ctx;  // flattened context
  GaussianMixture target;
  Vec x_in;
  double t_in = 1.0;
  Vec x0;  // detached clean prediction
};

// Regression onto the conditional teacher along ground-truth sequences.
void ar_warmstart(DistillState& state, const ArConfig& config, const TimestepGrid& train) {
  const DistillConfig& cfg = config.distill;
  const ToyProcessSpec& toy = config.toy;
  const NoisePath path;
  TokenMlpField gen(state.generator, toy);
  MlpField critic(state.critic, toy.chunk_dim(), toy.context_dim());
  Vec g_gen(state.generator.size()), g_crit(state.critic.size());
  FieldTape tape;
  const double scale = 2.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t it = 0; it < cfg.warmstart_iters; ++it) {
    Rng rng = stream_rng(cfg.seed, Stream::kInit, it + 1);
    std::fill(g_gen.begin(), g_gen.end(), 0.0);
    std::fill(g_crit.begin(), g_crit.end(), 0.0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = rng.index(toy.n_chunks);
      ChunkContext ctx = ChunkContext::initial(toy);
      for (std::size_t c = 0; c < i; ++c) {
        ctx = ctx.advanced(gmm_sample(toy_conditional_teacher(toy, ctx), rng));
      }
      const GaussianMixture target = toy_conditional_teacher(toy, ctx);
      const Vec cflat = ctx.flat();
      const double t = train.points[rng.index(train.size())];
      Vec eps(toy.chunk_dim());
      rng.fill_normal(eps);
      const Vec xt = forward_noise(path, gmm_sample(target, rng), t, eps);

      Vec cot(xt.size());
      const Vec v = gen.eval_taped(xt, t, cflat, tape);
      const Vec v_ref = teacher_velocity(target, path, xt, t);
      for (std::size_t j = 0; j < v.size(); ++j) cot[j] = scale * (v[j] - v_ref[j]);
      gen.backward(tape, cot, {}, g_gen, {});

      const Vec s = critic.eval_taped(xt, t, cflat, tape);
      const Vec s_ref = teacher_score(target, path, xt, t);
      for (std::size_t j = 0; j < s.size(); ++j) cot[j] = scale * (s[j] - s_ref[j]);
      critic.backward(tape, cot, {}, g_crit, {});
    }
    adamw_step(state.generator_opt, state.generator.flat(), g_gen);
    adamw_step(state.critic_opt, state.critic.flat(), g_crit);
  }
  state.generator_opt = AdamWState(state.generator.size(), cfg.generator_opt);
  state.critic_opt = AdamWState(state.critic.size(), cfg.critic_opt);
}

// Alignment of the K-step chunk's features to those of the 2K-step reference
// from the same noise and context. Adds the gradient into `grad`.
double align_sample(const TokenMlpField& gen, const ChunkSample& s,
                    const TimestepGrid& grid, const TimestepGrid& ref_grid, double delta,
                    double scale, Rng& rng, MutSpan grad) {
  const NoisePath path;
  const std::size_t n = gen.state_dim();
  Vec z(n);
  rng.fill_normal(z);
  const double t_f = ref_grid.points[1 + rng.index(ref_grid.size() - 1)];
  Vec eps(n);
  rng.fill_normal(eps);

  // Low branch: detached prefix, taped final step.
  const Vec x_last = backward_simulate(gen, grid, z, s.ctx, grid.size() - 1);
  const double t_last = grid.points.back();
  FieldTape step_tape;
  const Vec v = gen.eval_taped(x_last, t_last, s.ctx, step_tape);
  const Vec x0_low = path.clean_readout(x_last, v, t_last);

  const Vec x0_ref = backward_simulate(gen, ref_grid, z, s.ctx, ref_grid.size());

  FieldTape low_tape, ref_tape;
  gen.eval_taped(forward_noise(path, x0_low, t_f, eps), t_f, s.ctx, low_tape);
  gen.eval_taped(forward_noise(path, x0_ref, t_f, eps), t_f, s.ctx, ref_tape);
  const LossAndGrad lg =
      align_loss(gen.feature_block(low_tape, t_f), gen.feature_block(ref_tape, t_f), delta);
  if (lg.loss == 0.0) return 0.0;

  Vec fcot = lg.grad;
  for (double& g : fcot) g *= scale;
  Vec x_grad(n, 0.0);
  const Vec zero(n, 0.0);
  gen.backward(low_tape, zero, fcot, grad, x_grad);
  // x_tf = alpha x0 + sigma eps, x0 = x_last + coef * v.
  const double c = path.alpha(t_f) * readout_velocity_coef(path, t_last);
  Vec vcot(n);
  for (std::size_t i = 0; i < n; ++i) vcot[i] = c * x_grad[i];
  gen.backward(step_tape, vcot, {}, grad, {});
  return lg.loss;
}

}  // namespace

void train_ar(DistillState& state, const ArConfig& config, MetricsSink& sink,
              const TrainHooks& hooks) {
  const DistillConfig& cfg = state.config;
  if (!(cfg == config.distill)) {
    throw ConfigError("train_ar: state was created for a different configuration");
  }
  const ToyProcessSpec& toy = config.toy;
  const MixedStepConfig& mix = config.mixed;
  toy.validate();
  mix.validate();
  if (cfg.batch_size == 0 || cfg.critic_updates_per_gen_update == 0) {
    throw DomainError("train_ar: batch size and critic updates must be >= 1");
  }
  const NoisePath path;
  const TimestepGrid train =
      make_grid(cfg.train_grid.points, cfg.train_grid.shift, GridKind::kTraining);
  const double shift = cfg.infer_grid.shift;
  const std::size_t n = toy.chunk_dim();
  const std::size_t warmup = mix.warmup(cfg.iterations);

  if (state.step == 0 && cfg.warmstart_iters > 0) ar_warmstart(state, config, train);

  TokenMlpField gen(state.generator, toy);
  const MlpField critic(state.critic, n, toy.context_dim());
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::uint64_t it = state.step; it < cfg.iterations; ++it) {
    const DistillState last_good = state;
    try {
      Rng rk = stream_rng(cfg.seed, Stream::kStepCount, it);
      const std::size_t k = sample_step_count(mix, rk);
      const TimestepGrid grid = make_grid(k, shift, GridKind::kInference);

      // Rollouts with self-generated context up to a random chunk, then a
      // backward-simulated input for that chunk.
      Rng rg = stream_rng(cfg.seed, Stream::kGenerator, it);
      std::vector<ChunkSample> samples(cfg.batch_size);
      std::vector<Vec> prefix_x0, prefix_ctx;
      Vec z(n);
      for (ChunkSample& s : samples) {
        const std::size_t target_chunk = rg.index(toy.n_chunks);
        s.context = ChunkContext::initial(toy);
        for (std::size_t c = 0; c < target_chunk; ++c) {
          rg.fill_normal(z);
          Vec chunk = backward_simulate(gen, grid, z, s.context.flat(), grid.size());
          // The critic also sees the rolled-out prefix chunks.
          prefix_x0.push_back(chunk);
          prefix_ctx.push_back(s.context.flat());
          s.context = s.context.advanced(chunk);
        }
        s.ctx = s.context.flat();
        s.target = toy_conditional_teacher(toy, s.context);
        rg.fill_normal(z);
        const std::size_t j = rg.index(grid.size());
        if (cfg.backward_simulation) {
          s.x_in = backward_simulate(gen, grid, z, s.ctx, j);
        } else {
          s.x_in = forward_noise(path, gmm_sample(s.target, rg), grid.points[j], z);
        }
        s.t_in = grid.points[j];
        s.x0 = generator_clean(gen, path, s.x_in, s.t_in, s.ctx);
      }

      // Critic on the detached chunk predictions.
      Rng rc = stream_rng(cfg.seed, Stream::kCritic, it);
      std::vector<Vec> x0s, ctxs;
      for (const ChunkSample& s : samples) {
        x0s.push_back(s.x0);
        ctxs.push_back(s.ctx);
      }
      x0s.insert(x0s.end(), prefix_x0.begin(), prefix_x0.end());
      ctxs.insert(ctxs.end(), prefix_ctx.begin(), prefix_ctx.end());
      double critic_loss = 0.0, critic_grad_norm = 0.0;
      for (std::size_t u = 0; u < cfg.critic_updates_per_gen_update; ++u) {
        const LossAndGrad lg = critic_dsm_loss(critic, path, x0s, ctxs, train, cfg.t_jitter, rc);
        check_finite(lg.grad, "critic gradient", it);
        adamw_step(state.critic_opt, state.critic.flat(), lg.grad);
        critic_loss = lg.loss;
        critic_grad_norm = l2_norm(lg.grad);
      }

      std::vector<DmdSample> batch(samples.size());
      for (std::size_t b = 0; b < samples.size(); ++b) {
        DmdSample& d = batch[b];
        d.x_in = samples[b].x_in;
        d.t_in = samples[b].t_in;
        d.context = samples[b].ctx;
        d.target = &samples[b].target;
        d.t = train.points[rg.index(train.size())];
        d.eps.resize(n);
        rg.fill_normal(d.eps);
      }
      const DmdGradient dmd = dmd_generator_grad(gen, critic, path, batch, cfg.dmd_normalization);
      check_finite(dmd.grad, "dmd gradient", it);
      Vec total = dmd.grad;

      const bool extras = cfg.objective == Objective::kScDmd;
      const bool sc_on = extras && (mix.sc_gate == ScGate::kAlways || k == 8);
      double sc_value = 0.0, sc_grad_norm = 0.0;
      if (sc_on) {
        Rng rs = stream_rng(cfg.seed, Stream::kSelfConsistency, it);
        const TimestepGrid ends = cfg.sc_terminal_anchor ? with_terminal(grid) : grid;
        Vec sc_grad(total.size(), 0.0);
        Vec eps(n);
        for (const ChunkSample& s : samples) {
          const double t_s = train.points[rs.index(train.size())];
          const auto triple = sample_triple(rs, t_s, train, ends);
          if (!triple) continue;
          rs.fill_normal(eps);
          const Vec x_s = forward_noise(path, s.x0, t_s, eps);
          sc_value += inv_b * sc_loss_sample(gen, x_s, *triple, s.ctx, cfg.sc_detach,
                                             sc_grad, inv_b);
        }
        check_finite(sc_grad, "sc gradient", it);
        sc_grad_norm = l2_norm(sc_grad);
        if (mix.lambda_sc != 0.0) {
          kernels::active().axpy(mix.lambda_sc, sc_grad.data(), total.data(), total.size());
        }
      }

      const std::size_t k_ref = reference_step_count(k);
      bool align_on = false;
      double align_value = 0.0, align_grad_norm = 0.0;
      if (extras && k_ref != 0 && it >= warmup) {
        Rng ra = stream_rng(cfg.seed, Stream::kAlign, it);
        align_on = ra.bernoulli(mix.align_apply_prob);
        if (align_on) {
          const TimestepGrid ref_grid = make_grid(k_ref, shift, GridKind::kInference);
          Vec align_grad(total.size(), 0.0);
          for (const ChunkSample& s : samples) {
            align_value += inv_b * align_sample(gen, s, grid, ref_grid, mix.align_delta,
                                                inv_b, ra, align_grad);
          }
          check_finite(align_grad, "alignment gradient", it);
          align_grad_norm = l2_norm(align_grad);
          if (mix.lambda_align != 0.0) {
            kernels::active().axpy(mix.lambda_align, align_grad.data(), total.data(),
                                   total.size());
          }
        }
      }

      if (!std::isfinite(dmd.score_mismatch) || !std::isfinite(sc_value) ||
          !std::isfinite(align_value) || !std::isfinite(critic_loss)) {
        throw TrainingError("non-finite loss at iteration " + std::to_string(it));
      }
      adamw_step(state.generator_opt, state.generator.flat(), total);
      state.step = it + 1;

      json rec;
      rec["iter"] = it;
      rec["k"] = k;
      rec["loss_dmd"] = dmd.score_mismatch;
      rec["loss_sc"] = sc_value;
      rec["loss_align"] = align_value;
      rec["loss_critic"] = critic_loss;
      rec["sc_active"] = sc_on ? 1 : 0;
      rec["align_active"] = align_on ? 1 : 0;
      rec["grad_norms"] = {{"generator", l2_norm(total)},
                           {"dmd", l2_norm(dmd.grad)},
                           {"sc", sc_grad_norm},
                           {"align", align_grad_norm},
                           {"critic", critic_grad_norm}};
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

std::pair<DistillState, MetricsLog> train_ar(const ArConfig& config) {
  DistillState state = init_ar_state(config);
  MetricsLog log;
  train_ar(state, config, log);
  return {std::move(state), std::move(log)};
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> per_chunk_energy(const VectorField& generator,
                                     const ToyProcessSpec& spec, std::size_t k,
                                     double shift, std::size_t n_chunks,
                                     std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw DomainError("per_chunk_energy: need >= 2 samples");
  const TimestepGrid grid = make_grid(k, shift, GridKind::kInference);
  Rng gen_rng = stream_rng(seed, Stream::kEval, 1);
  Rng data_rng = stream_rng(seed, Stream::kData, 1);
  std::vector<PointSet> generated(n_chunks, PointSet(spec.chunk_dim(), {}));
  std::vector<PointSet> truth(n_chunks, PointSet(spec.chunk_dim(), {}));
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto g = rollout_sequence(generator, spec, grid, n_chunks, gen_rng);
    const auto r = sample_toy_sequence(spec, n_chunks, data_rng);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      generated[c].data.insert(generated[c].data.end(), g[c].begin(), g[c].end());
      truth[c].data.insert(truth[c].data.end(), r[c].begin(), r[c].end());
    }
  }
  std::vector<double> out(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) out[c] = energy_distance(generated[c], truth[c]);
  return out;
}

double least_squares_slope(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  const double xm = 0.5 * static_cast<double>(n - 1);
  const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (y[i] - ym);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

DriftCurve eval_long_rollout(const VectorField& generator, const ToyProcessSpec& spec,
                             std::size_t n_chunks_long, std::size_t k, double shift,
                             std::size_t n_samples,
                             const std::vector<std::uint64_t>& seeds) {
  if (n_chunks_long < spec.n_chunks) {
    throw DomainError("eval_long_rollout: horizon shorter than the training horizon");
  }
  if (seeds.empty()) throw DomainError("eval_long_rollout: no seeds");
  DriftCurve out;
  out.energy.assign(n_chunks_long, 0.0);
  for (std::uint64_t seed : seeds) {
    const auto e = per_chunk_energy(generator, spec, k, shift, n_chunks_long, n_samples, seed);
    for (std::size_t c = 0; c < e.size(); ++c) {
      out.energy[c] += e[c] / static_cast<double>(seeds.size());
    }
  }
  out.slope = least_squares_slope(out.energy);
  return out;
}

}  // namespace scdmd
