#include "scdmd/transport.hpp"

#include <cmath>
#include <string>

namespace scdmd {

Vec euler_step(const VectorField& v, ConstSpan x, double t_from, double t_to,
               ConstSpan context) {
  if (!(t_from > t_to && t_to >= 0.0)) {
    throw DomainError("euler_step: need t_from > t_to >= 0, got " +
                      std::to_string(t_from) + " -> " + std::to_string(t_to));
  }
  const Vec vel = v.eval(x, t_from, context);
  const double h = t_from - t_to;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - h * vel[i];
  return out;
}

RolloutTrace sample_k_steps(const VectorField& v, const TimestepGrid& grid,
                            ConstSpan noise, ConstSpan context, Solver solver,
                            const NoisePath& path, Rng* renoise) {
  if (grid.points.empty()) throw DomainError("sample_k_steps: empty grid");
  require_size(noise, v.state_dim(), "sample_k_steps noise");
  const auto* trainable = dynamic_cast<const TrainableField*>(&v);

  RolloutTrace trace;
  trace.solver = solver;
  trace.timesteps = grid.points;
  trace.timesteps.push_back(0.0);
  trace.states.reserve(grid.size() + 1);
  trace.states.emplace_back(noise.begin(), noise.end());

  FieldTape tape;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec& x = trace.states.back();
    const double t = grid.points[i];
    const double t_next = grid.next(i);
    if (!(t > t_next)) throw DomainError("sample_k_steps: grid not decreasing");
    Vec vel;
    if (trainable) {
      vel = trainable->eval_taped(x, t, context, tape);
      if (!tape.features.empty()) trace.features.push_back(tape.features);
    } else {
      vel = v.eval(x, t, context);
    }
    Vec next(x.size());
    const bool last = i + 1 == grid.size();
    if (last) {
      next = path.clean_readout(x, vel, t);
    } else if (solver == Solver::kEuler) {
      const double h = t - t_next;
      for (std::size_t j = 0; j < x.size(); ++j) next[j] = x[j] - h * vel[j];
    } else {
      const Vec x0 = path.clean_readout(x, vel, t);
      Vec eps;
      if (renoise) {
        eps.resize(x.size());
        renoise->fill_normal(eps);
      } else {
        eps = path.noise_readout(x, vel, t);
      }
      next = forward_noise(path, x0, t_next, eps);
    }
    trace.states.push_back(std::move(next));
  }
  return trace;
}

ShortcutEndpoints shortcut_endpoints(const VectorField& v, ConstSpan x,
                                     double t_s, double t_m, double t_e,
                                     ConstSpan context) {
  if (!(t_s > t_m && t_m > t_e && t_e >= 0.0)) {
    throw DomainError("shortcut: need t_s > t_m > t_e >= 0");
  }
  const Vec v_s = v.eval(x, t_s, context);
  ShortcutEndpoints out;
  out.direct.resize(x.size());
  Vec mid(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.direct[i] = x[i] - (t_s - t_e) * v_s[i];
    mid[i] = x[i] - (t_s - t_m) * v_s[i];
  }
  const Vec v_m = v.eval(mid, t_m, context);
  out.composed.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.composed[i] = mid[i] - (t_m - t_e) * v_m[i];
  }
  return out;
}

std::vector<double> semigroup_defects(const VectorField& v,
                                      const std::vector<Vec>& x_batch,
                                      double t_s, double t_m, double t_e,
                                      ConstSpan context, double epsilon_reg) {
  if (x_batch.empty()) throw DomainError("semigroup defect: empty batch");
  std::vector<double> out;
  out.reserve(x_batch.size());
  for (const Vec& x : x_batch) {
    const ShortcutEndpoints e = shortcut_endpoints(v, x, t_s, t_m, t_e, context);
    out.push_back(squared_distance(e.direct, e.composed) /
                  (squared_distance(e.direct, x) + epsilon_reg));
  }
  return out;
}

double local_semigroup_defect(const VectorField& v,
                              const std::vector<Vec>& x_batch, double t_s,
                              double t_m, double t_e, ConstSpan context,
                              double epsilon_reg) {
  const std::vector<double> d =
      semigroup_defects(v, x_batch, t_s, t_m, t_e, context, epsilon_reg);
  double s = 0.0;
  for (double x : d) s += x;
  return s / static_cast<double>(d.size());
}

DefectReport evaluate_defect_path(const VectorField& v,
                                  const TimestepGrid& infer,
                                  const TimestepGrid& train,
                                  const std::vector<Vec>& noises,
                                  ConstSpan context, double epsilon_reg) {
  if (noises.empty()) throw DomainError("defect path: no noises");
  std::vector<RolloutTrace> traces;
  traces.reserve(noises.size());
  for (const Vec& z : noises) traces.push_back(sample_k_steps(v, infer, z, context));

  DefectReport report;
  for (std::size_t i = 0; i < infer.size(); ++i) {
    const double t_s = infer.points[i];
    const double t_e = infer.next(i);
    const std::vector<double> mids = points_between(train, t_e, t_s);
    if (mids.empty()) continue;
    std::vector<Vec> batch;
    batch.reserve(traces.size());
    for (const auto& tr : traces) batch.push_back(tr.states[i]);
    double interval_sum = 0.0;
    for (double t_m : mids) {
      const std::vector<double> d =
          semigroup_defects(v, batch, t_s, t_m, t_e, context, epsilon_reg);
      const double n = static_cast<double>(d.size());
      double mean = 0.0;
      for (double x : d) mean += x;
      mean /= n;
      double var = 0.0;
      for (double x : d) var += (x - mean) * (x - mean);
      var = d.size() > 1 ? var / (n - 1.0) : 0.0;
      report.rows.push_back({t_s, t_e, t_m, mean, std::sqrt(var / n), d.size()});
      interval_sum += mean;
    }
    report.interval_means.push_back(interval_sum / static_cast<double>(mids.size()));
  }
  if (report.interval_means.empty()) {
    throw DomainError("defect path: no interval contains a training point");
  }
  double s = 0.0;
  for (double m : report.interval_means) s += m;
  report.path_average = s / static_cast<double>(report.interval_means.size());
  return report;
}

}  // namespace scdmd
