#include "scdmd/mlp.hpp"

#include <cmath>
#include <string>

#include "scdmd/kernels.hpp"

namespace scdmd {
namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation act, double x) {
  if (act == Activation::kTanh) return std::tanh(x);
  return x * sigmoid(x);
}

inline double activate_grad(Activation act, double x) {
  if (act == Activation::kTanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

MlpSpec MlpSpec::make(std::size_t input_dim, std::vector<std::size_t> hidden,
                      std::size_t output_dim, Activation activation) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_dims = std::move(hidden);
  spec.output_dim = output_dim;
  spec.activation = activation;
  spec.feature_layer_index =
      spec.hidden_dims.empty() ? 0 : spec.hidden_dims.size() - 1;
  spec.validate();
  return spec;
}

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw ShapeError("mlp spec: input and output dims must be >= 1");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ShapeError("mlp spec: hidden dims must be >= 1");
  }
  if (!hidden_dims.empty() && feature_layer_index >= hidden_dims.size()) {
    throw ShapeError("mlp spec: feature_layer_index " +
                     std::to_string(feature_layer_index) +
                     " out of range for " + std::to_string(hidden_dims.size()) +
                     " hidden layers");
  }
}

std::size_t MlpSpec::layer_in(std::size_t l) const {
  return l == 0 ? input_dim : hidden_dims[l - 1];
}

std::size_t MlpSpec::layer_out(std::size_t l) const {
  return l == hidden_dims.size() ? output_dim : hidden_dims[l];
}

std::size_t MlpSpec::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k) {
    off += layer_out(k) * layer_in(k) + layer_out(k);
  }
  return off;
}

std::size_t MlpSpec::param_count() const { return layer_offset(num_layers()); }

std::size_t MlpSpec::feature_dim() const {
  return hidden_dims.empty() ? 0 : hidden_dims[feature_layer_index];
}

MlpParams::MlpParams(const MlpSpec& spec)
    : spec_(spec), flat_(spec.param_count(), 0.0) {
  spec_.validate();
}

MlpParams::MlpParams(const MlpSpec& spec, Vec flat)
    : spec_(spec), flat_(std::move(flat)) {
  spec_.validate();
  require_size(flat_, spec_.param_count(), "mlp params");
}

MlpParams MlpParams::glorot(const MlpSpec& spec, Rng& rng) {
  MlpParams params(spec);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t rows = spec.layer_out(l);
    const std::size_t cols = spec.layer_in(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    double* w = params.flat_.data() + spec.layer_offset(l);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      w[i] = rng.uniform(-limit, limit);
    }
  }
  return params;
}

LayerView MlpParams::layer(std::size_t l) const {
  const std::size_t rows = spec_.layer_out(l);
  const std::size_t cols = spec_.layer_in(l);
  const double* base = flat_.data() + spec_.layer_offset(l);
  return LayerView{{base, rows * cols}, {base + rows * cols, rows}, rows, cols};
}

Vec flatten_params(const MlpParams& params) {
  return Vec(params.flat().begin(), params.flat().end());
}

MlpParams unflatten_params(const MlpSpec& spec, ConstSpan flat) {
  return MlpParams(spec, Vec(flat.begin(), flat.end()));
}

ConstSpan MlpTape::features(const MlpSpec& spec) const {
  if (spec.hidden_dims.empty()) return {};
  return inputs[spec.feature_layer_index + 1];
}

void mlp_forward_taped(const MlpSpec& spec, const MlpParams& params,
                       ConstSpan input, MlpTape& tape) {
  require_size(input, spec.input_dim, "mlp input");
  const auto& k = kernels::active();
  const std::size_t layers = spec.num_layers();
  tape.inputs.resize(layers);
  tape.pre.resize(layers - 1);
  tape.inputs[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerView layer = params.layer(l);
    const bool last = l + 1 == layers;
    Vec& out = last ? tape.output : tape.pre[l];
    out.resize(layer.rows);
    k.gemv(layer.weight.data(), tape.inputs[l].data(), layer.bias.data(),
           out.data(), layer.rows, layer.cols);
    if (!last) {
      Vec& h = tape.inputs[l + 1];
      h.resize(layer.rows);
      for (std::size_t i = 0; i < layer.rows; ++i) {
        h[i] = activate(spec.activation, out[i]);
      }
    }
  }
}

MlpOutput mlp_forward(const MlpSpec& spec, const MlpParams& params,
                      ConstSpan input) {
  MlpTape tape;
  mlp_forward_taped(spec, params, input, tape);
  const ConstSpan f = tape.features(spec);
  return MlpOutput{std::move(tape.output), Vec(f.begin(), f.end())};
}

void mlp_backward_taped(const MlpSpec& spec, const MlpParams& params,
                        const MlpTape& tape, ConstSpan output_cotangent,
                        ConstSpan feature_cotangent, MutSpan param_grad,
                        MutSpan input_grad) {
  require_size(output_cotangent, spec.output_dim, "mlp output cotangent");
  require_size(param_grad, spec.param_count(), "mlp param grad");
  if (!feature_cotangent.empty()) {
    require_size(feature_cotangent, spec.feature_dim(), "mlp feature cotangent");
  }
  if (!input_grad.empty()) require_size(input_grad, spec.input_dim, "mlp input grad");

  const auto& k = kernels::active();
  thread_local Vec g;
  thread_local Vec gh;
  g.assign(output_cotangent.begin(), output_cotangent.end());
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const LayerView layer = params.layer(l);
    double* w_grad = param_grad.data() + spec.layer_offset(l);
    double* b_grad = w_grad + layer.rows * layer.cols;
    k.ger_acc(g.data(), tape.inputs[l].data(), w_grad, layer.rows, layer.cols);
    for (std::size_t i = 0; i < layer.rows; ++i) b_grad[i] += g[i];
    if (l == 0 && input_grad.empty()) break;
    gh.assign(layer.cols, 0.0);
    k.gemv_t_acc(layer.weight.data(), g.data(), gh.data(), layer.rows,
                 layer.cols);
    if (l == 0) {
      std::copy(gh.begin(), gh.end(), input_grad.begin());
      break;
    }
    // gh is dL/dh_l, h_l being the post-activation output of hidden layer l-1.
    if (!feature_cotangent.empty() && l - 1 == spec.feature_layer_index) {
      for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += feature_cotangent[i];
    }
    const Vec& pre = tape.pre[l - 1];
    g.resize(gh.size());
    for (std::size_t i = 0; i < gh.size(); ++i) {
      g[i] = gh[i] * activate_grad(spec.activation, pre[i]);
    }
  }
}

MlpGradients mlp_backward(const MlpSpec& spec, const MlpParams& params,
                          ConstSpan input, ConstSpan output_cotangent) {
  require_size(output_cotangent, spec.output_dim, "mlp output cotangent");
  MlpTape tape;
  mlp_forward_taped(spec, params, input, tape);
  MlpGradients grads{Vec(spec.param_count(), 0.0), Vec(spec.input_dim, 0.0)};
  mlp_backward_taped(spec, params, tape, output_cotangent, {}, grads.param_grad,
                     grads.input_grad);
  return grads;
}

}  // namespace scdmd
