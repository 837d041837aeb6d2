#pragma once

#include <cstdint>

#include "scdmd/vec.hpp"

namespace scdmd {

struct AdamWHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  bool operator==(const AdamWHyper&) const = default;
};

struct AdamWState {
  Vec m;
  Vec v;
  std::uint64_t step = 0;
  AdamWHyper hyper;

  AdamWState() = default;
  AdamWState(std::size_t param_count, AdamWHyper hyper)
      : m(param_count, 0.0), v(param_count, 0.0), hyper(hyper) {}
};

/// One AdamW step with decoupled weight decay:
///   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
/// Throws OptimizerError, leaving `state` and `params` untouched, when `grad`
/// holds a non-finite entry.
void adamw_step(AdamWState& state, MutSpan params, ConstSpan grad);

}  // namespace scdmd
