#pragma once

// Toy autoregressive chunk process, its conditional analytic teacher, the
// per-token student network and mixed-step rollout training.
//
// A sequence is a walk around the unit circle. Each chunk holds F frames of
// S tokens in D = 2 dimensions; a frame is a small square of tokens centred
// on the circle and rotated with its heading. The walking direction (+1 or
// -1) is drawn once per sequence and is only revealed by the motion between
// frames, so the first chunk is bimodal.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "scdmd/distill.hpp"
#include "scdmd/sc_align.hpp"

namespace scdmd {

struct ToyProcessSpec {
  std::size_t n_chunks = 8;
  std::size_t frames = 2;
  std::size_t tokens = 4;
  std::size_t channels = 2;
  std::size_t memory = 2;  // chunks kept in the context buffer
  double angular_step = 0.39269908169872414;  // pi / 8 per frame
  double noise = 0.05;
  double start_angle = 0.0;
  std::vector<std::array<double, 2>> offsets{
      {0.1, 0.1}, {-0.1, 0.1}, {-0.1, -0.1}, {0.1, -0.1}};

  void validate() const;
  std::size_t chunk_dim() const { return frames * tokens * channels; }
  std::size_t context_dim() const { return memory * chunk_dim(); }

  bool operator==(const ToyProcessSpec&) const = default;
};

/// The last `memory` chunks, oldest first, zero-padded before the sequence
/// has produced that many.
struct ChunkContext {
  std::vector<Vec> buffer;
  std::size_t chunk_index = 0;

  static ChunkContext initial(const ToyProcessSpec& spec);
  ChunkContext advanced(ConstSpan chunk) const;
  /// Number of buffer slots holding real chunks.
  std::size_t filled() const;
  Vec flat() const;
};

/// Rebuilds a context from its flattened buffer. Padding slots are the
/// all-zero chunks; once the buffer is full the result has chunk_index ==
/// memory, which the conditional teacher treats like any later position.
ChunkContext context_from_flat(const ToyProcessSpec& spec, ConstSpan flat);

/// Token layout of one frame whose centre sits at `angle` on the unit circle.
Vec frame_layout(const ToyProcessSpec& spec, double angle);

/// Angle of each frame's token centroid.
std::vector<double> frame_angles(const ToyProcessSpec& spec, ConstSpan chunk);

/// Distribution of the next chunk given the context: a two-component mixture
/// over the walking direction while the direction is unknown, otherwise one
/// isotropic Gaussian with variance noise^2 around the advanced layout.
GaussianMixture toy_conditional_teacher(const ToyProcessSpec& spec,
                                        const ChunkContext& context);

/// Ground-truth sequence sampled chunk by chunk from the conditional teacher.
std::vector<Vec> sample_toy_sequence(const ToyProcessSpec& spec, std::size_t n_chunks,
                                     Rng& rng);

/// Shared per-token velocity network. Token k = (f, s) sees
/// [its own state, the whole chunk state, one-hot f, one-hot s, time
/// embedding, flattened context] and predicts its D velocity components.
/// Features are the last hidden layer of each token, giving F x S rows.
class TokenMlpField final : public TrainableField {
 public:
  TokenMlpField(const MlpParams& params, const ToyProcessSpec& spec);

  static MlpSpec make_spec(const ToyProcessSpec& spec, std::vector<std::size_t> hidden,
                           Activation activation = Activation::kSilu);

  std::size_t state_dim() const override { return spec_.chunk_dim(); }
  std::size_t param_count() const override { return params_->size(); }
  std::size_t feature_dim() const override { return params_->spec().feature_dim(); }
  std::size_t feature_rows() const override { return spec_.frames * spec_.tokens; }

  Vec eval_taped(ConstSpan x, double t, ConstSpan context,
                 FieldTape& tape) const override;
  void backward(const FieldTape& tape, ConstSpan cotangent,
                ConstSpan feature_cotangent, MutSpan param_grad,
                MutSpan x_grad) const override;

  FeatureBlock feature_block(const FieldTape& tape, double t_f) const;

 private:
  const MlpParams* params_;
  ToyProcessSpec spec_;
};

struct ChunkRollout {
  Vec chunk;
  RolloutTrace trace;
};

/// K-step sampling of one chunk under `context`.
ChunkRollout rollout_chunk(const VectorField& generator, const ChunkContext& context,
                           const TimestepGrid& grid, ConstSpan noise,
                           Solver solver = Solver::kEuler, Rng* renoise = nullptr);

/// Rolls out `n_chunks` chunks, feeding each output back into the context.
/// Noise for chunk c is drawn from `rng` in order.
std::vector<Vec> rollout_sequence(const VectorField& generator, const ToyProcessSpec& spec,
                                  const TimestepGrid& grid, std::size_t n_chunks, Rng& rng);

enum class ScGate { kK8, kAlways };

struct MixedStepConfig {
  std::vector<std::size_t> step_counts{2, 4, 8};
  std::vector<double> probabilities{0.2, 0.4, 0.4};
  std::size_t fixed_k = 0;  // nonzero: always use this step count
  double lambda_sc = 1.0;
  double lambda_align = 0.05;
  std::optional<std::size_t> align_warmup_iters;  // unset: 25% of iterations
  double align_apply_prob = 0.5;
  double align_delta = 0.05;
  ScGate sc_gate = ScGate::kK8;

  void validate() const;
  std::size_t warmup(std::size_t iterations) const;

  bool operator==(const MixedStepConfig&) const = default;
};

std::size_t sample_step_count(const MixedStepConfig& config, Rng& rng);

/// Next denser schedule used as the alignment reference: 2 -> 4, 4 -> 8.
/// Returns 0 for step counts without a reference.
std::size_t reference_step_count(std::size_t k);

struct ArConfig {
  DistillConfig distill;
  MixedStepConfig mixed;
  ToyProcessSpec toy;

  /// AR defaults: backward simulation on, smaller batches, 3k iterations.
  static ArConfig defaults();
};

/// Fresh state: token network generator, flat chunk critic on
/// [chunk, time embedding, context].
DistillState init_ar_state(const ArConfig& config);

/// Mixed-step training. `state.config` must equal `config.distill`.
/// Throws TrainingError on non-finite values; `state` then holds the last
/// good iterate.
void train_ar(DistillState& state, const ArConfig& config, MetricsSink& sink,
              const TrainHooks& hooks = {});

std::pair<DistillState, MetricsLog> train_ar(const ArConfig& config);

/// Energy distance between generated chunk c and ground-truth chunk c, for
/// each chunk index, from `n_samples` sequences each.
std::vector<double> per_chunk_energy(const VectorField& generator,
                                     const ToyProcessSpec& spec, std::size_t k,
                                     double shift, std::size_t n_chunks,
                                     std::size_t n_samples, std::uint64_t seed);

struct DriftCurve {
  std::vector<double> energy;  // per chunk index, averaged over seeds
  double slope = 0.0;          // least-squares slope against chunk index
};

/// Per-chunk energy distance to the ground-truth marginal over a horizon of
/// `n_chunks_long`, averaged over `seeds`.
DriftCurve eval_long_rollout(const VectorField& generator, const ToyProcessSpec& spec,
                             std::size_t n_chunks_long, std::size_t k, double shift,
                             std::size_t n_samples,
                             const std::vector<std::uint64_t>& seeds);

double least_squares_slope(const std::vector<double>& y);

}  // namespace scdmd
