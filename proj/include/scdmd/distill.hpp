#pragma once

// Distribution matching distillation: critic training by denoising score
// matching, the generator's DMD gradient, backward simulation and the
// alternating non-autoregressive loop with the self-consistency term.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "scdmd/adamw.hpp"
#include "scdmd/field.hpp"
#include "scdmd/metrics.hpp"
#include "scdmd/sc_align.hpp"
#include "scdmd/schedule.hpp"
#include "scdmd/teacher.hpp"
#include "scdmd/transport.hpp"

namespace scdmd {

enum class DmdNormalization { kL1, kNone };
/// kDmd never enters the self-consistency code; kScDmd always computes the
/// SC term and adds lambda_sc times its gradient.
enum class Objective { kDmd, kScDmd };

struct GridConfig {
  std::size_t points = 8;
  double shift = 12.0;

  bool operator==(const GridConfig&) const = default;
};

struct DistillConfig {
  Objective objective = Objective::kScDmd;
  double lambda_sc = 1.0;
  std::size_t critic_updates_per_gen_update = 5;
  bool backward_simulation = false;
  GridConfig train_grid{8, 12.0};
  GridConfig infer_grid{4, 12.0};
  std::size_t batch_size = 64;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;

  std::vector<std::size_t> generator_hidden{64, 64};
  std::vector<std::size_t> critic_hidden{64, 64};
  Activation activation = Activation::kSilu;
  AdamWHyper generator_opt{3e-3, 0.9, 0.999, 1e-8, 0.0};
  AdamWHyper critic_opt{2e-3, 0.9, 0.999, 1e-8, 0.0};

  DmdNormalization dmd_normalization = DmdNormalization::kL1;
  ScDetach sc_detach = ScDetach::kNone;
  // Lets shortcut triples end at the sampler's terminal time 0 in addition to
  // the inference points.
  bool sc_terminal_anchor = true;
  // Half-width of the uniform jitter added to critic/DMD levels (0 = exact
  // training-grid levels).
  double t_jitter = 0.0;
  // Regression of the generator onto the teacher velocity and of the critic
  // onto the teacher score before distillation starts (0 = random init).
  std::size_t warmstart_iters = 1000;

  std::size_t eval_every = 0;  // 0 disables periodic defect evaluation
  std::size_t eval_samples = 256;
  double defect_epsilon = 1e-8;
  std::size_t checkpoint_every = 0;

  bool operator==(const DistillConfig&) const = default;
};

struct DistillState {
  MlpParams generator;
  AdamWState generator_opt;
  MlpParams critic;
  AdamWState critic_opt;
  std::uint64_t step = 0;
  DistillConfig config;
};

/// One critic training example: x_t = forward_noise(x0, t, eps).
struct DsmSample {
  Vec x0;
  Vec context;
  double t = 1.0;
  Vec eps;
};

/// Denoising score matching, mean over the batch of
/// ||s(x_t, t, c) + eps / sigma(t)||^2, with its parameter gradient.
LossAndGrad critic_dsm_loss(const TrainableField& critic, const NoisePath& path,
                            std::span<const DsmSample> batch);

/// Draws (t, eps) for each clean point: t uniform over `levels` (plus
/// jitter), eps standard normal.
LossAndGrad critic_dsm_loss(const TrainableField& critic, const NoisePath& path,
                            const std::vector<Vec>& x0_batch,
                            const std::vector<Vec>& contexts,
                            const TimestepGrid& levels, double jitter, Rng& rng);

/// One generator example. The generator maps (x_in, t_in, context) to the
/// clean readout x0; x_t = forward_noise(x0, t, eps) is scored against the
/// diffused `target`.
struct DmdSample {
  Vec x_in;
  double t_in = 1.0;
  Vec context;
  const GaussianMixture* target = nullptr;
  double t = 1.0;
  Vec eps;
};

struct DmdGradient {
  Vec grad;                     // length P of the generator
  std::vector<Vec> cotangents;  // w per sample, the cotangent on x_t
  std::vector<Vec> x_t;         // noised generator outputs
  double score_mismatch = 0.0;  // mean ||s_fake - s_real||^2
};

/// Per-sample cotangent on x_t:
///   w = c (s_fake(x_t) - s_real(x_t)),  c = d / (||s_fake - s_real||_1 + 1e-6)
/// (c = 1 without normalization), back-propagated through x0 = G(x_in) with
/// the score difference held constant. The result is the batch mean, equal
/// to the gradient of the surrogate 1/2 ||x_t - stopgrad(x_t - w)||^2.
DmdGradient dmd_generator_grad(const TrainableField& generator,
                               const VectorField& critic, const NoisePath& path,
                               std::span<const DmdSample> batch,
                               DmdNormalization normalization);

/// Clean readout of the generator from (x_in, t_in).
Vec generator_clean(const VectorField& generator, const NoisePath& path,
                    ConstSpan x_in, double t_in, ConstSpan context = {});

/// Runs the student sampler from `noise` and returns the state at
/// grid.points[stop_index]; stop_index == grid.size() returns the final
/// clean readout.
Vec backward_simulate(const VectorField& generator, const TimestepGrid& grid,
                      ConstSpan noise, ConstSpan context, std::size_t stop_index,
                      Solver solver = Solver::kEuler, const NoisePath& path = {},
                      Rng* renoise = nullptr);

/// Fresh state with Glorot-initialized networks.
DistillState init_distill_state(const DistillConfig& config, std::size_t dim);

struct TrainHooks {
  std::function<void(const DistillState&)> on_checkpoint;
};

/// Alternating critic / generator optimization for `config.iterations`
/// iterations starting from `state.step`. Throws TrainingError on a
/// non-finite loss or gradient; `state` then holds the last good iterate.
void train_nonar(DistillState& state, const GaussianMixture& teacher,
                 MetricsSink& sink, const TrainHooks& hooks = {});

/// Convenience wrapper: fresh state, in-memory log.
std::pair<DistillState, MetricsLog> train_nonar(const DistillConfig& config,
                                                const GaussianMixture& teacher);

}  // namespace scdmd
