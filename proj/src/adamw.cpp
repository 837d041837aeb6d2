#include "scdmd/adamw.hpp"

#include <cmath>

#include "scdmd/kernels.hpp"

namespace scdmd {

void adamw_step(AdamWState& state, MutSpan params, ConstSpan grad) {
  require_size(grad, params.size(), "adamw grad");
  require_size(state.m, params.size(), "adamw first moment");
  require_size(state.v, params.size(), "adamw second moment");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw OptimizerError("adamw: non-finite gradient at index " +
                           std::to_string(i));
    }
  }
  const AdamWHyper& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double bias_c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bias_c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  kernels::active().adamw(params.data(), grad.data(), state.m.data(),
                          state.v.data(), params.size(), h.learning_rate,
                          h.beta1, h.beta2, h.epsilon, h.weight_decay, bias_c1,
                          bias_c2);
  state.step = t;
}

}  // namespace scdmd
