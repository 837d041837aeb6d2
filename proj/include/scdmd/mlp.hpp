#pragma once

// Fully connected network with exact reverse-mode gradients.
//
// Layer l maps h_l (length in_l) to a_l = W_l h_l + b_l (length out_l).
// Hidden layers apply the activation, the output layer is linear.
// Parameters live in one flat vector ordered layer by layer, each layer
// storing W_l row-major (out_l x in_l) followed by b_l.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scdmd/rng.hpp"
#include "scdmd/vec.hpp"

namespace scdmd {

enum class Activation : std::uint32_t { kTanh = 0, kSilu = 1 };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::kSilu;
  // Hidden layer whose post-activation values are exported as features.
  std::size_t feature_layer_index = 0;

  /// Spec with the feature layer set to the last hidden layer.
  static MlpSpec make(std::size_t input_dim, std::vector<std::size_t> hidden,
                      std::size_t output_dim,
                      Activation activation = Activation::kSilu);

  void validate() const;
  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t l) const;
  std::size_t layer_out(std::size_t l) const;
  /// Offset of W_l inside the flat parameter vector.
  std::size_t layer_offset(std::size_t l) const;
  std::size_t param_count() const;
  std::size_t feature_dim() const;

  bool operator==(const MlpSpec&) const = default;
};

struct LayerView {
  std::span<const double> weight;  // out x in, row-major
  std::span<const double> bias;    // out
  std::size_t rows;
  std::size_t cols;
};

class MlpParams {
 public:
  MlpParams() = default;
  /// All-zero parameters.
  explicit MlpParams(const MlpSpec& spec);
  /// Adopts a flat vector; throws ShapeError on a length mismatch.
  MlpParams(const MlpSpec& spec, Vec flat);

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight, zero biases.
  static MlpParams glorot(const MlpSpec& spec, Rng& rng);

  const MlpSpec& spec() const { return spec_; }
  std::size_t size() const { return flat_.size(); }
  std::span<const double> flat() const { return flat_; }
  std::span<double> flat() { return flat_; }
  LayerView layer(std::size_t l) const;

 private:
  MlpSpec spec_;
  Vec flat_;
};

Vec flatten_params(const MlpParams& params);
MlpParams unflatten_params(const MlpSpec& spec, ConstSpan flat);

/// Activations cached by a forward pass for the backward pass.
struct MlpTape {
  // inputs[l] is h_l, the input of layer l; inputs[0] is the network input.
  std::vector<Vec> inputs;
  // pre[l] = W_l h_l + b_l for hidden layers.
  std::vector<Vec> pre;
  Vec output;

  ConstSpan features(const MlpSpec& spec) const;
};

struct MlpOutput {
  Vec output;
  Vec features;
};

struct MlpGradients {
  Vec param_grad;
  Vec input_grad;
};

MlpOutput mlp_forward(const MlpSpec& spec, const MlpParams& params,
                      ConstSpan input);

/// Gradients of <cotangent, output> with respect to parameters and input.
MlpGradients mlp_backward(const MlpSpec& spec, const MlpParams& params,
                          ConstSpan input, ConstSpan output_cotangent);

/// Forward pass recording the tape. `tape` is reused across calls.
void mlp_forward_taped(const MlpSpec& spec, const MlpParams& params,
                       ConstSpan input, MlpTape& tape);

/// Backward pass over a recorded tape. Accumulates into `param_grad`
/// (length P) and writes the input gradient into `input_grad` when non-empty.
/// `feature_cotangent`, when non-empty, is added to the gradient flowing into
/// the feature layer's post-activation values.
void mlp_backward_taped(const MlpSpec& spec, const MlpParams& params,
                        const MlpTape& tape, ConstSpan output_cotangent,
                        ConstSpan feature_cotangent, MutSpan param_grad,
                        MutSpan input_grad);

}  // namespace scdmd
