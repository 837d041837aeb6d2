#include "scdmd/sc_align.hpp"

#include <cmath>

namespace scdmd {

double sc_loss_sample(const TrainableField& v, ConstSpan x_s,
                      const ShortcutTriple& triple, ConstSpan context,
                      ScDetach detach, MutSpan param_grad, double scale) {
  const auto [t_s, t_m, t_e] = triple;
  if (!(t_s > t_m && t_m > t_e && t_e >= 0.0)) {
    throw DomainError("sc_loss: need t_s > t_m > t_e >= 0");
  }
  const std::size_t d = x_s.size();
  FieldTape tape_s, tape_m;
  const Vec v_s = v.eval_taped(x_s, t_s, context, tape_s);
  const double a = t_s - t_m;
  const double b = t_m - t_e;
  Vec mid(d);
  for (std::size_t i = 0; i < d; ++i) mid[i] = x_s[i] - a * v_s[i];
  const Vec v_m = v.eval_taped(mid, t_m, context, tape_m);

  // x1 - x2 = (t_m - t_e) (v_m - v_s)
  Vec g(d);
  double loss = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = b * (v_m[i] - v_s[i]);
    loss += diff * diff;
    g[i] = 2.0 * scale * diff;
  }

  Vec cot_s(d, 0.0);
  if (detach != ScDetach::kDirect) {
    // x1 = x_s - (t_s - t_e) v_s, dL/dx1 = g
    for (std::size_t i = 0; i < d; ++i) cot_s[i] -= (t_s - t_e) * g[i];
  }
  if (detach != ScDetach::kComposed) {
    // x2 = mid - b v_m, dL/dx2 = -g
    Vec cot_m(d);
    for (std::size_t i = 0; i < d; ++i) cot_m[i] = b * g[i];
    Vec cot_mid(d);
    for (std::size_t i = 0; i < d; ++i) cot_mid[i] = -g[i];
    v.backward(tape_m, cot_m, {}, param_grad, cot_mid);
    // mid = x_s - a v_s
    for (std::size_t i = 0; i < d; ++i) cot_s[i] -= a * cot_mid[i];
  }
  v.backward(tape_s, cot_s, {}, param_grad, {});
  return loss;
}

LossAndGrad sc_loss(const TrainableField& v, const std::vector<Vec>& x_s_batch,
                    const ShortcutTriple& triple, ConstSpan context,
                    ScDetach detach) {
  if (x_s_batch.empty()) throw DomainError("sc_loss: empty batch");
  LossAndGrad out{0.0, Vec(v.param_count(), 0.0)};
  const double scale = 1.0 / static_cast<double>(x_s_batch.size());
  for (const Vec& x : x_s_batch) {
    out.loss += scale * sc_loss_sample(v, x, triple, context, detach, out.grad, scale);
  }
  return out;
}

FeatureBlock::FeatureBlock(std::size_t f, std::size_t s, std::size_t d,
                           Vec values, double t_f)
    : frames(f), tokens(s), channels(d), data(std::move(values)), t_f(t_f) {
  validate();
}

void FeatureBlock::validate() const {
  if (frames == 0 || tokens == 0 || channels == 0) {
    throw ShapeError("feature block: F, S, D must be >= 1");
  }
  require_size(data, frames * tokens * channels, "feature block");
}

namespace {

// Unit-normalized tokens and their norms (0 for degenerate tokens).
void normalize_tokens(const FeatureBlock& z, Vec& unit, Vec& norms) {
  const std::size_t n_tok = z.frames * z.tokens;
  unit.assign(z.data.size(), 0.0);
  norms.assign(n_tok, 0.0);
  for (std::size_t k = 0; k < n_tok; ++k) {
    const double* src = z.data.data() + k * z.channels;
    double sq = 0.0;
    for (std::size_t c = 0; c < z.channels; ++c) sq += src[c] * src[c];
    const double nrm = std::sqrt(sq);
    if (nrm < kDegenerateTokenNorm) continue;
    norms[k] = nrm;
    for (std::size_t c = 0; c < z.channels; ++c) {
      unit[k * z.channels + c] = src[c] / nrm;
    }
  }
}

std::vector<Vec> relations_from_unit(const FeatureBlock& z, const Vec& unit) {
  const std::size_t S = z.tokens, D = z.channels;
  std::vector<Vec> out(z.frames, Vec(S * S, 0.0));
  for (std::size_t f = 0; f < z.frames; ++f) {
    const double* u = unit.data() + f * S * D;
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = i; j < S; ++j) {
        double r = 0.0;
        for (std::size_t c = 0; c < D; ++c) r += u[i * D + c] * u[j * D + c];
        if (i == j) r = 1.0;
        out[f][i * S + j] = r;
        out[f][j * S + i] = r;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Vec> relation_matrices(const FeatureBlock& z) {
  z.validate();
  Vec unit, norms;
  normalize_tokens(z, unit, norms);
  return relations_from_unit(z, unit);
}

LossAndGrad align_loss(const FeatureBlock& z_low, const FeatureBlock& z_ref,
                       double delta) {
  z_low.validate();
  z_ref.validate();
  if (z_low.frames != z_ref.frames || z_low.tokens != z_ref.tokens ||
      z_low.channels != z_ref.channels) {
    throw ShapeError("align_loss: feature blocks differ in shape");
  }
  const std::size_t F = z_low.frames, S = z_low.tokens, D = z_low.channels;
  Vec unit, norms;
  normalize_tokens(z_low, unit, norms);
  const std::vector<Vec> r_low = relations_from_unit(z_low, unit);
  const std::vector<Vec> r_ref = relation_matrices(z_ref);

  const double w = 1.0 / (static_cast<double>(F) * static_cast<double>(S * S));
  LossAndGrad out{0.0, Vec(z_low.data.size(), 0.0)};
  Vec grad_unit(S * D);
  for (std::size_t f = 0; f < F; ++f) {
    // dL/dR_ij, then dL/du_i = sum_j (G_ij + G_ji) u_j.
    Vec g_rel(S * S, 0.0);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        const double diff = r_low[f][i * S + j] - r_ref[f][i * S + j];
        const double excess = std::abs(diff) - delta;
        if (excess > 0.0) {
          out.loss += w * excess;
          if (i != j) g_rel[i * S + j] = w * (diff > 0.0 ? 1.0 : -1.0);
        }
      }
    }
    const double* u = unit.data() + f * S * D;
    std::fill(grad_unit.begin(), grad_unit.end(), 0.0);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        const double gij = g_rel[i * S + j] + g_rel[j * S + i];
        if (gij == 0.0) continue;
        for (std::size_t c = 0; c < D; ++c) grad_unit[i * D + c] += gij * u[j * D + c];
      }
    }
    // Through the normalization u = z / |z|: (I - u u^T) / |z|.
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t k = f * S + i;
      if (norms[k] == 0.0) continue;
      const double* ui = u + i * D;
      const double* gi = grad_unit.data() + i * D;
      double proj = 0.0;
      for (std::size_t c = 0; c < D; ++c) proj += ui[c] * gi[c];
      double* dst = out.grad.data() + k * D;
      for (std::size_t c = 0; c < D; ++c) dst[c] = (gi[c] - proj * ui[c]) / norms[k];
    }
  }
  return out;
}

}  // namespace scdmd
