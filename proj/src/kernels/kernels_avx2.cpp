// Compiled with -mavx2 -mfma -ffp-contract=off. Only reached after a runtime
// CPU check, so nothing here may be inlined into baseline code.

#include <immintrin.h>

#include <cmath>

#include "kernels_internal.hpp"

namespace scdmd::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const double* w, const double* x, const double* b, double* y,
               std::size_t rows, std::size_t cols) {
  std::size_t r = 0;
  // Four rows at a time share the loads of x.
  for (; r + 4 <= rows; r += 4) {
    const double* r0 = w + r * cols;
    const double* r1 = r0 + cols;
    const double* r2 = r1 + cols;
    const double* r3 = r2 + cols;
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd();
    __m256d a3 = _mm256_setzero_pd();
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      const __m256d vx = _mm256_loadu_pd(x + c);
      a0 = _mm256_fmadd_pd(_mm256_loadu_pd(r0 + c), vx, a0);
      a1 = _mm256_fmadd_pd(_mm256_loadu_pd(r1 + c), vx, a1);
      a2 = _mm256_fmadd_pd(_mm256_loadu_pd(r2 + c), vx, a2);
      a3 = _mm256_fmadd_pd(_mm256_loadu_pd(r3 + c), vx, a3);
    }
    double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
    for (; c < cols; ++c) {
      s0 += r0[c] * x[c];
      s1 += r1[c] * x[c];
      s2 += r2[c] * x[c];
      s3 += r3[c] * x[c];
    }
    if (b) {
      s0 += b[r];
      s1 += b[r + 1];
      s2 += b[r + 2];
      s3 += b[r + 3];
    }
    y[r] = s0;
    y[r + 1] = s1;
    y[r + 2] = s2;
    y[r + 3] = s3;
  }
  for (; r < rows; ++r) {
    const double acc = dot_avx2(w + r * cols, x, cols);
    y[r] = b ? acc + b[r] : acc;
  }
}

void gemv_t_acc_avx2(const double* w, const double* g, double* x_grad,
                     std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    axpy_avx2(gr, w + r * cols, x_grad, cols);
  }
}

void ger_acc_avx2(const double* g, const double* x, double* w_grad,
                  std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    axpy_avx2(gr, x, w_grad + r * cols, cols);
  }
}

double sum_distances_avx2(const double* point, const double* points,
                          std::size_t count, std::size_t dim) {
  if (dim != 2) {
    double total = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      const double* q = points + j * dim;
      double sq = 0.0;
      std::size_t k = 0;
      __m256d acc = _mm256_setzero_pd();
      for (; k + 4 <= dim; k += 4) {
        const __m256d d =
            _mm256_sub_pd(_mm256_loadu_pd(point + k), _mm256_loadu_pd(q + k));
        acc = _mm256_fmadd_pd(d, d, acc);
      }
      sq = hsum(acc);
      for (; k < dim; ++k) {
        const double d = point[k] - q[k];
        sq += d * d;
      }
      total += std::sqrt(sq);
    }
    return total;
  }
  // 2-D points: two points per register, four per iteration.
  const __m256d p = _mm256_setr_pd(point[0], point[1], point[0], point[1]);
  __m256d total = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) {
    const __m256d d0 = _mm256_sub_pd(p, _mm256_loadu_pd(points + 2 * j));
    const __m256d d1 = _mm256_sub_pd(p, _mm256_loadu_pd(points + 2 * j + 4));
    const __m256d s0 = _mm256_mul_pd(d0, d0);
    const __m256d s1 = _mm256_mul_pd(d1, d1);
    // hadd pairs: (s0[0]+s0[1], s1[0]+s1[1], s0[2]+s0[3], s1[2]+s1[3])
    const __m256d sq = _mm256_hadd_pd(s0, s1);
    total = _mm256_add_pd(total, _mm256_sqrt_pd(sq));
  }
  double acc = hsum(total);
  for (; j < count; ++j) {
    const double dx = point[0] - points[2 * j];
    const double dy = point[1] - points[2 * j + 1];
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc;
}

void adamw_avx2(double* param, const double* grad, double* m, double* v,
                std::size_t n, double lr, double beta1, double beta2,
                double eps, double weight_decay, double bias_c1,
                double bias_c2) {
  const double one_m_b1 = 1.0 - beta1;
  const double one_m_b2 = 1.0 - beta2;
  const double decay = 1.0 - lr * weight_decay;
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d v1b1 = _mm256_set1_pd(one_m_b1);
  const __m256d v1b2 = _mm256_set1_pd(one_m_b2);
  const __m256d vbc1 = _mm256_set1_pd(bias_c1);
  const __m256d vbc2 = _mm256_set1_pd(bias_c2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vdecay = _mm256_set1_pd(decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(v1b1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                      _mm256_mul_pd(v1b2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, vbc1);
    const __m256d v_hat = _mm256_div_pd(vi, vbc2);
    const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(param + i), vdecay);
    const __m256d step = _mm256_mul_pd(
        vlr, _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), veps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(p, step));
  }
  for (; i < n; ++i) {
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

}  // namespace

const KernelTable kAvx2Table{
    Isa::kAvx2,   "avx2",         dot_avx2,         axpy_avx2,
    gemv_avx2,    gemv_t_acc_avx2, ger_acc_avx2,    sum_distances_avx2,
    adamw_avx2,
};

}  // namespace scdmd::kernels::detail
