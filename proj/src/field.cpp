#include "scdmd/field.hpp"

#include <cmath>

namespace scdmd {

void time_embedding(double t, double* out) {
  out[0] = t;
  out[1] = 0.25 * std::log(std::max(t, 1e-12) / (1.0 - t + 1e-3));
}

MlpField::MlpField(const MlpParams& params, std::size_t state_dim,
                   std::size_t context_dim)
    : params_(&params), state_dim_(state_dim), context_dim_(context_dim) {
  const MlpSpec& spec = params.spec();
  if (spec.input_dim != state_dim + kTimeEmbeddingDim + context_dim ||
      spec.output_dim != state_dim) {
    throw ShapeError("mlp field: network spec does not match state/context dims");
  }
}

MlpSpec MlpField::make_spec(std::size_t state_dim, std::size_t context_dim,
                            std::vector<std::size_t> hidden,
                            Activation activation) {
  return MlpSpec::make(state_dim + kTimeEmbeddingDim + context_dim,
                       std::move(hidden), state_dim, activation);
}

Vec MlpField::eval_taped(ConstSpan x, double t, ConstSpan context,
                         FieldTape& tape) const {
  require_size(x, state_dim_, "mlp field state");
  require_size(context, context_dim_, "mlp field context");
  thread_local Vec input;
  input.resize(params_->spec().input_dim);
  std::copy(x.begin(), x.end(), input.begin());
  time_embedding(t, input.data() + state_dim_);
  std::copy(context.begin(), context.end(),
            input.begin() + static_cast<std::ptrdiff_t>(state_dim_ + kTimeEmbeddingDim));
  tape.nets.resize(1);
  mlp_forward_taped(params_->spec(), *params_, input, tape.nets[0]);
  const ConstSpan f = tape.nets[0].features(params_->spec());
  tape.features.assign(f.begin(), f.end());
  return tape.nets[0].output;
}

void MlpField::backward(const FieldTape& tape, ConstSpan cotangent,
                        ConstSpan feature_cotangent, MutSpan param_grad,
                        MutSpan x_grad) const {
  const MlpSpec& spec = params_->spec();
  if (x_grad.empty()) {
    mlp_backward_taped(spec, *params_, tape.nets[0], cotangent, feature_cotangent,
                       param_grad, {});
    return;
  }
  require_size(x_grad, state_dim_, "mlp field x grad");
  thread_local Vec input_grad;
  input_grad.assign(spec.input_dim, 0.0);
  mlp_backward_taped(spec, *params_, tape.nets[0], cotangent, feature_cotangent,
                     param_grad, input_grad);
  for (std::size_t i = 0; i < state_dim_; ++i) x_grad[i] += input_grad[i];
}

}  // namespace scdmd
