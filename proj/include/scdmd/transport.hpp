#pragma once

// Student-induced transport: the one-step Euler operator, K-step samplers and
// the displacement-normalized local semigroup defect.

#include <vector>

#include "scdmd/field.hpp"
#include "scdmd/rng.hpp"
#include "scdmd/schedule.hpp"
#include "scdmd/teacher.hpp"

namespace scdmd {

enum class Solver { kEuler, kCm };

/// x - (t_from - t_to) v(x, t_from, c). Throws DomainError unless
/// t_from > t_to >= 0.
Vec euler_step(const VectorField& v, ConstSpan x, double t_from, double t_to,
               ConstSpan context = {});

struct RolloutTrace {
  std::vector<double> timesteps;  // grid points followed by 0
  std::vector<Vec> states;        // states[i] lives at timesteps[i]
  std::vector<Vec> features;      // per evaluated step, when available
  Solver solver = Solver::kEuler;

  const Vec& final_state() const { return states.back(); }
};

/// Runs the K-step sampler from `noise` at grid.points[0]. The last step
/// returns the clean-point readout. The CM solver re-noises the readout with
/// fresh draws from `renoise`; with a null `renoise` it re-noises with the
/// noise implied by the current state, which coincides with Euler on the
/// rectified path.
RolloutTrace sample_k_steps(const VectorField& v, const TimestepGrid& grid,
                            ConstSpan noise, ConstSpan context = {},
                            Solver solver = Solver::kEuler,
                            const NoisePath& path = {}, Rng* renoise = nullptr);

/// Direct endpoint x^(1) = Psi(t_s -> t_e) and composed endpoint
/// x^(2) = Psi(t_m -> t_e) o Psi(t_s -> t_m) of the Euler operator.
struct ShortcutEndpoints {
  Vec direct;
  Vec composed;
};
ShortcutEndpoints shortcut_endpoints(const VectorField& v, ConstSpan x,
                                     double t_s, double t_m, double t_e,
                                     ConstSpan context = {});

/// ||x1 - x2||^2 / (||x1 - x_s||^2 + eps) for each state in the batch.
std::vector<double> semigroup_defects(const VectorField& v,
                                      const std::vector<Vec>& x_batch,
                                      double t_s, double t_m, double t_e,
                                      ConstSpan context = {},
                                      double epsilon_reg = 1e-8);

/// Batch mean of semigroup_defects.
double local_semigroup_defect(const VectorField& v,
                              const std::vector<Vec>& x_batch, double t_s,
                              double t_m, double t_e, ConstSpan context = {},
                              double epsilon_reg = 1e-8);

struct IntervalDefect {
  double t_s = 0.0;
  double t_e = 0.0;
  double t_m = 0.0;
  double defect_mean = 0.0;
  double defect_stderr = 0.0;
  std::size_t n = 0;
};

struct DefectReport {
  std::vector<IntervalDefect> rows;  // one per (interval, t_m)
  std::vector<double> interval_means;
  double path_average = 0.0;
};

/// Defect along the test-time path: the sampler runs on `infer` from each
/// noise; every adjacent interval (t_i, t_{i+1}), including the final one to
/// 0, is scored with each training point strictly inside it as t_m.
/// Intervals without such a point are skipped.
DefectReport evaluate_defect_path(const VectorField& v,
                                  const TimestepGrid& infer,
                                  const TimestepGrid& train,
                                  const std::vector<Vec>& noises,
                                  ConstSpan context = {},
                                  double epsilon_reg = 1e-8);

}  // namespace scdmd
