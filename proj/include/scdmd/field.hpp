#pragma once

// Vector fields over the state space: learned velocities and scores (MLP
// backed, differentiable) and analytic teacher fields.

#include <functional>
#include <vector>

#include "scdmd/mlp.hpp"
#include "scdmd/teacher.hpp"
#include "scdmd/vec.hpp"

namespace scdmd {

/// Two-value embedding of the noise level fed to every network:
/// (t, 0.25 * log(t / (1 - t + 1e-3))). The log term separates the densely
/// packed high-noise levels of shifted grids.
inline constexpr std::size_t kTimeEmbeddingDim = 2;
void time_embedding(double t, double* out);

class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual std::size_t state_dim() const = 0;
  virtual Vec eval(ConstSpan x, double t, ConstSpan context) const = 0;
};

/// Activations recorded by TrainableField::eval_taped.
struct FieldTape {
  std::vector<MlpTape> nets;
  Vec features;  // concatenated feature rows, one per network evaluation
};

class TrainableField : public VectorField {
 public:
  virtual std::size_t param_count() const = 0;
  /// Length of one feature row and number of rows per evaluation.
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t feature_rows() const = 0;

  virtual Vec eval_taped(ConstSpan x, double t, ConstSpan context,
                         FieldTape& tape) const = 0;

  /// Back-propagates `cotangent` (length state_dim) and the optional
  /// `feature_cotangent` (rows x feature_dim) through a taped evaluation.
  /// Adds parameter gradients into `param_grad` and, when `x_grad` is
  /// non-empty, adds the state gradient into it.
  virtual void backward(const FieldTape& tape, ConstSpan cotangent,
                        ConstSpan feature_cotangent, MutSpan param_grad,
                        MutSpan x_grad) const = 0;

  Vec eval(ConstSpan x, double t, ConstSpan context) const override {
    FieldTape tape;
    return eval_taped(x, t, context, tape);
  }
};

/// Network on [x, time embedding, context] -> state_dim.
/// Non-owning: the parameters must outlive the field.
class MlpField final : public TrainableField {
 public:
  MlpField(const MlpParams& params, std::size_t state_dim,
           std::size_t context_dim = 0);

  static MlpSpec make_spec(std::size_t state_dim, std::size_t context_dim,
                           std::vector<std::size_t> hidden,
                           Activation activation = Activation::kSilu);

  std::size_t state_dim() const override { return state_dim_; }
  std::size_t param_count() const override { return params_->size(); }
  std::size_t feature_dim() const override { return params_->spec().feature_dim(); }
  std::size_t feature_rows() const override { return 1; }

  Vec eval_taped(ConstSpan x, double t, ConstSpan context,
                 FieldTape& tape) const override;
  void backward(const FieldTape& tape, ConstSpan cotangent,
                ConstSpan feature_cotangent, MutSpan param_grad,
                MutSpan x_grad) const override;

 private:
  const MlpParams* params_;
  std::size_t state_dim_;
  std::size_t context_dim_;
};

/// Probability-flow velocity of the analytic teacher.
class TeacherVelocityField final : public VectorField {
 public:
  TeacherVelocityField(GaussianMixture gmm, NoisePath path = {})
      : gmm_(std::move(gmm)), path_(path) {}
  std::size_t state_dim() const override { return gmm_.dim; }
  Vec eval(ConstSpan x, double t, ConstSpan) const override {
    return teacher_velocity(gmm_, path_, x, t);
  }

 private:
  GaussianMixture gmm_;
  NoisePath path_;
};

/// Wraps a callable (x, t, context) -> velocity.
class FunctionField final : public VectorField {
 public:
  using Fn = std::function<Vec(ConstSpan, double, ConstSpan)>;
  FunctionField(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  std::size_t state_dim() const override { return dim_; }
  Vec eval(ConstSpan x, double t, ConstSpan c) const override {
    return fn_(x, t, c);
  }

 private:
  std::size_t dim_;
  Fn fn_;
};

}  // namespace scdmd
