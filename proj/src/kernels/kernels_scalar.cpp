#include <cmath>

#include "kernels_internal.hpp"

namespace scdmd::kernels::detail {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* x, const double* b, double* y,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = b ? acc + b[r] : acc;
  }
}

void gemv_t_acc_scalar(const double* w, const double* g, double* x_grad,
                       std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) x_grad[c] += gr * row[c];
  }
}

void ger_acc_scalar(const double* g, const double* x, double* w_grad,
                    std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    double* row = w_grad + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

double sum_distances_scalar(const double* point, const double* points,
                            std::size_t count, std::size_t dim) {
  double total = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    const double* q = points + j * dim;
    double sq = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = point[k] - q[k];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total;
}

void adamw_scalar(double* param, const double* grad, double* m, double* v,
                  std::size_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, double bias_c1,
                  double bias_c2) {
  const double one_m_b1 = 1.0 - beta1;
  const double one_m_b2 = 1.0 - beta2;
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    const double mi = beta1 * m[i] + one_m_b1 * g;
    const double vi = beta2 * v[i] + one_m_b2 * (g * g);
    m[i] = mi;
    v[i] = vi;
    const double m_hat = mi / bias_c1;
    const double v_hat = vi / bias_c2;
    const double p = param[i] * decay;
    param[i] = p - lr * (m_hat / (std::sqrt(v_hat) + eps));
  }
}

const KernelTable kScalarTable{
    Isa::kScalar,        "scalar",          dot_scalar,
    axpy_scalar,         gemv_scalar,       gemv_t_acc_scalar,
    ger_acc_scalar,      sum_distances_scalar, adamw_scalar,
};

}  // namespace scdmd::kernels::detail
