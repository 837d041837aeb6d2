#pragma once

// Shortcut self-consistency loss and relation-matrix feature alignment.

#include <vector>

#include "scdmd/field.hpp"
#include "scdmd/schedule.hpp"

namespace scdmd {

/// Which endpoint, if any, is treated as a constant target.
enum class ScDetach { kNone, kDirect, kComposed };

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};

/// ||x^(1) - x^(2)||^2 for one state. Adds `scale` times its parameter
/// gradient into `param_grad` and returns the unscaled loss.
double sc_loss_sample(const TrainableField& v, ConstSpan x_s,
                      const ShortcutTriple& triple, ConstSpan context,
                      ScDetach detach, MutSpan param_grad, double scale);

/// Batch mean of sc_loss_sample with its parameter gradient.
LossAndGrad sc_loss(const TrainableField& v, const std::vector<Vec>& x_s_batch,
                    const ShortcutTriple& triple, ConstSpan context = {},
                    ScDetach detach = ScDetach::kNone);

/// F frames x S tokens x D channels, row-major, extracted at level t_f.
struct FeatureBlock {
  std::size_t frames = 1;
  std::size_t tokens = 1;
  std::size_t channels = 1;
  Vec data;
  double t_f = 0.0;

  FeatureBlock() = default;
  FeatureBlock(std::size_t f, std::size_t s, std::size_t d, Vec values,
               double t_f = 0.0);
  void validate() const;
  const double* token(std::size_t f, std::size_t s) const {
    return data.data() + (f * tokens + s) * channels;
  }
};

/// Tokens with norm below this are treated as zero vectors.
inline constexpr double kDegenerateTokenNorm = 1e-12;

/// Per-frame S x S cosine-similarity matrices (row-major). A degenerate token
/// gets a zero row and column with 1 on the diagonal.
std::vector<Vec> relation_matrices(const FeatureBlock& z);

/// Margin-relaxed alignment:
///   1/F sum_f 1/S^2 sum_ij [ |R_low(i,j) - R_ref(i,j)| - delta ]_+
/// The reference is a constant; the gradient is taken w.r.t. z_low.
LossAndGrad align_loss(const FeatureBlock& z_low, const FeatureBlock& z_ref,
                       double delta);

}  // namespace scdmd
