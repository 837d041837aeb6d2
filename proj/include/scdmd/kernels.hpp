#pragma once

// Dense double-precision kernels used by the MLP, the optimizer and the
// sample statistics. Every kernel has a scalar reference implementation and,
// where the CPU supports it, an AVX2/FMA variant. The active table is chosen
// once at startup; SCDMD_KERNELS=scalar|avx2 overrides the choice.
//
// Matrices are row-major with `rows` output rows and `cols` input columns.

#include <cstddef>
#include <string_view>

namespace scdmd::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x + b   (b may be null)
  void (*gemv)(const double* w, const double* x, const double* b, double* y,
               std::size_t rows, std::size_t cols);
  // x_grad += W^T g
  void (*gemv_t_acc)(const double* w, const double* g, double* x_grad,
                     std::size_t rows, std::size_t cols);
  // W_grad += g x^T
  void (*ger_acc)(const double* g, const double* x, double* w_grad,
                  std::size_t rows, std::size_t cols);
  // Sum of Euclidean distances from `point` to each of `count` points stored
  // contiguously with stride `dim`.
  double (*sum_distances)(const double* point, const double* points,
                          std::size_t count, std::size_t dim);
  // Fused AdamW update. Elementwise and free of contractions, so every
  // variant produces bit-identical results.
  void (*adamw)(double* param, const double* grad, double* m, double* v,
                std::size_t n, double lr, double beta1, double beta2,
                double eps, double weight_decay, double bias_c1,
                double bias_c2);
};

const KernelTable& scalar_table();
// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_has_avx2();

// The table selected for this process.
const KernelTable& active();

// Forces a table for the remainder of the process (tests and benchmarks).
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace scdmd::kernels
