#include <doctest.h>

#include <bit>
#include <cmath>

#include "scdmd/adamw.hpp"
#include "scdmd/mlp.hpp"

using namespace scdmd;

namespace {

Vec randn(std::size_t n, Rng& rng) {
  Vec v(n);
  rng.fill_normal(v);
  return v;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Straight-line forward pass written against the documented parameter
// layout, without the library's kernels.
Vec naive_forward(const MlpSpec& spec, const Vec& flat, const Vec& input) {
  Vec h = input;
  std::size_t off = 0;
  const std::size_t layers = spec.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = h.size();
    const std::size_t out = l + 1 < layers ? spec.hidden_dims[l] : spec.output_dim;
    Vec a(out);
    for (std::size_t r = 0; r < out; ++r) {
      double s = flat[off + out * in + r];
      for (std::size_t c = 0; c < in; ++c) s += flat[off + r * in + c] * h[c];
      a[r] = s;
    }
    off += out * in + out;
    if (l + 1 < layers) {
      for (double& x : a) x = spec.activation == Activation::kTanh ? std::tanh(x) : silu(x);
    }
    h = a;
  }
  return h;
}

}  // namespace

TEST_CASE("mlp_forward: zero parameters give the zero map") {
  const MlpSpec spec = MlpSpec::make(3, {5, 4}, 2);
  const MlpParams params(spec);
  const MlpOutput out = mlp_forward(spec, params, Vec{0.3, -2.0, 7.0});
  CHECK(out.output == Vec{0.0, 0.0});
}

TEST_CASE("mlp_forward: identity layers with tanh map 0 to 0") {
  const MlpSpec spec = MlpSpec::make(2, {2}, 2, Activation::kTanh);
  MlpParams params(spec);
  auto p = params.flat();
  // Layer 0: W = I (offset 0), b = 0; layer 1: W = I (offset 6), b = 0.
  p[0] = p[3] = 1.0;
  p[6] = p[9] = 1.0;
  CHECK(mlp_forward(spec, params, Vec{0.0, 0.0}).output == Vec{0.0, 0.0});
}

TEST_CASE("mlp_forward: matches a straight-line evaluation of a 2-16-16-2 net") {
  for (Activation act : {Activation::kTanh, Activation::kSilu}) {
    Rng rng(11);
    const MlpSpec spec = MlpSpec::make(2, {16, 16}, 2, act);
    const MlpParams params = MlpParams::glorot(spec, rng);
    const Vec x{0.7, -1.3};
    const Vec got = mlp_forward(spec, params, x).output;
    const Vec want = naive_forward(spec, flatten_params(params), x);
    for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
}

TEST_CASE("mlp_forward: features are the last hidden layer by default") {
  Rng rng(12);
  const MlpSpec spec = MlpSpec::make(3, {6, 5}, 2);
  CHECK(spec.feature_layer_index == 1);
  CHECK(spec.feature_dim() == 5);
  const MlpParams params = MlpParams::glorot(spec, rng);
  CHECK(mlp_forward(spec, params, randn(3, rng)).features.size() == 5);
}

TEST_CASE("mlp_forward: repeated calls are bit-identical") {
  Rng rng(13);
  const MlpSpec spec = MlpSpec::make(4, {16, 16}, 3);
  const MlpParams params = MlpParams::glorot(spec, rng);
  const Vec x = randn(4, rng);
  const Vec a = mlp_forward(spec, params, x).output;
  const Vec b = mlp_forward(spec, params, x).output;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(a[i]) == std::bit_cast<std::uint64_t>(b[i]));
  }
}

TEST_CASE("mlp_forward: rejects inputs of the wrong length") {
  const MlpSpec spec = MlpSpec::make(3, {4}, 2);
  const MlpParams params(spec);
  CHECK_THROWS_AS(mlp_forward(spec, params, Vec{1.0, 2.0}), ShapeError);
}

TEST_CASE("mlp_backward: zero cotangent gives zero gradients") {
  Rng rng(14);
  const MlpSpec spec = MlpSpec::make(3, {8}, 2);
  const MlpParams params = MlpParams::glorot(spec, rng);
  const MlpGradients g = mlp_backward(spec, params, randn(3, rng), Vec{0.0, 0.0});
  for (double x : g.param_grad) CHECK(x == 0.0);
  for (double x : g.input_grad) CHECK(x == 0.0);
}

TEST_CASE("mlp_backward: linear network weight gradient is cotangent_i * input_j") {
  Rng rng(15);
  const MlpSpec spec = MlpSpec::make(3, {}, 2);
  const MlpParams params = MlpParams::glorot(spec, rng);
  const Vec x{0.5, -1.0, 2.0};
  const Vec c{3.0, -0.25};
  const MlpGradients g = mlp_backward(spec, params, x, c);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.param_grad[i * 3 + j] == doctest::Approx(c[i] * x[j]));
    CHECK(g.param_grad[6 + i] == doctest::Approx(c[i]));
  }
}

TEST_CASE("mlp_backward: every coordinate matches central differences") {
  Rng rng(16);
  for (Activation act : {Activation::kTanh, Activation::kSilu}) {
    const MlpSpec spec = MlpSpec::make(3, {7, 5}, 2, act);
    MlpParams params = MlpParams::glorot(spec, rng);
    Vec x = randn(3, rng);
    const Vec c = randn(2, rng);
    const MlpGradients g = mlp_backward(spec, params, x, c);
    auto f = [&] {
      const Vec y = mlp_forward(spec, params, x).output;
      return c[0] * y[0] + c[1] * y[1];
    };
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      double& p = params.flat()[k];
      const double p0 = p;
      p = p0 + h;
      const double up = f();
      p = p0 - h;
      const double down = f();
      p = p0;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - g.param_grad[k]) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0 = x[k];
      x[k] = x0 + h;
      const double up = f();
      x[k] = x0 - h;
      const double down = f();
      x[k] = x0;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - g.input_grad[k]) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("mlp_backward_taped: feature cotangent equals gradient of <c_f, features>") {
  Rng rng(17);
  const MlpSpec spec = MlpSpec::make(3, {6, 4}, 2);
  MlpParams params = MlpParams::glorot(spec, rng);
  const Vec x = randn(3, rng);
  const Vec fc = randn(4, rng);
  MlpTape tape;
  mlp_forward_taped(spec, params, x, tape);
  Vec grad(params.size(), 0.0), xg(3, 0.0);
  mlp_backward_taped(spec, params, tape, Vec{0.0, 0.0}, fc, grad, xg);
  const std::size_t k = 5;
  const double h = 1e-5;
  auto f = [&] {
    const Vec feat = mlp_forward(spec, params, x).features;
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += fc[i] * feat[i];
    return s;
  };
  double& p = params.flat()[k];
  const double p0 = p;
  p = p0 + h;
  const double up = f();
  p = p0 - h;
  const double down = f();
  p = p0;
  CHECK(grad[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("parameter count of a 2-16-2 net is 82") {
  CHECK(MlpSpec::make(2, {16}, 2).param_count() == 82);
}

TEST_CASE("flatten/unflatten round trip and single-entry perturbation") {
  Rng rng(18);
  const MlpSpec spec = MlpSpec::make(2, {16}, 2);
  const MlpParams params = MlpParams::glorot(spec, rng);
  const Vec flat = flatten_params(params);
  CHECK(flatten_params(unflatten_params(spec, flat)) == flat);
  for (std::size_t k = 0; k < flat.size(); ++k) {
    Vec bumped = flat;
    bumped[k] += 1.0;
    const Vec back = flatten_params(unflatten_params(spec, bumped));
    std::size_t changed = 0;
    for (std::size_t i = 0; i < flat.size(); ++i) changed += back[i] != flat[i];
    CHECK(changed == 1);
  }
  CHECK_THROWS_AS(unflatten_params(spec, Vec(81)), ShapeError);
}

TEST_CASE("glorot init stays inside +-sqrt(6 / (fan_in + fan_out)) with zero biases") {
  Rng rng(19);
  const MlpSpec spec = MlpSpec::make(3, {10}, 4);
  const MlpParams params = MlpParams::glorot(spec, rng);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const LayerView v = params.layer(l);
    const double bound = std::sqrt(6.0 / static_cast<double>(v.rows + v.cols));
    for (double w : v.weight) CHECK(std::abs(w) <= bound);
    for (double b : v.bias) CHECK(b == 0.0);
  }
}

TEST_CASE("adamw: zero gradient without decay leaves parameters and moments") {
  AdamWState st(3, AdamWHyper{0.1, 0.9, 0.999, 1e-8, 0.0});
  Vec p{1.0, -2.0, 3.0};
  adamw_step(st, p, Vec{0.0, 0.0, 0.0});
  CHECK(p == Vec{1.0, -2.0, 3.0});
  CHECK(st.m == Vec(3, 0.0));
  CHECK(st.v == Vec(3, 0.0));
  CHECK(st.step == 1);
}

TEST_CASE("adamw: zero gradient with decay scales parameters by 1 - lr * wd") {
  AdamWState st(2, AdamWHyper{0.1, 0.9, 0.999, 1e-8, 0.01});
  Vec p{1.0, -4.0};
  adamw_step(st, p, Vec{0.0, 0.0});
  CHECK(p[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-4.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("adamw: first bias-corrected step moves by about lr") {
  AdamWState st(1, AdamWHyper{0.1, 0.9, 0.999, 1e-8, 0.0});
  Vec p{1.0};
  adamw_step(st, p, Vec{1.0});
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adamw: non-finite gradient throws and leaves state untouched") {
  AdamWState st(2, AdamWHyper{});
  Vec p{1.0, 2.0};
  adamw_step(st, p, Vec{0.5, 0.5});
  const AdamWState before = st;
  const Vec p_before = p;
  CHECK_THROWS_AS(adamw_step(st, p, Vec{NAN, 0.0}), OptimizerError);
  CHECK(p == p_before);
  CHECK(st.m == before.m);
  CHECK(st.v == before.v);
  CHECK(st.step == before.step);
}
