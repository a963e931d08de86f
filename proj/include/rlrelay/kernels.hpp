#pragma once

// Dense arithmetic kernels used by the Q-network and the optimizer.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA implementation. The active table is chosen once at startup from
// CPUID and can be overridden with RLRELAY_SIMD=scalar|avx2 or select().
// SIMD variants reassociate sums, so results agree with the scalar path to
// rounding, not bit-for-bit. Within one variant every kernel is
// deterministic.

#include <cstddef>
#include <string_view>

namespace rlrelay::kernels {

enum class Variant { scalar, avx2 };

struct KernelTable {
  Variant variant;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[r] = bias[r] + dot(w[r*cols..], x), r < rows. w is row-major.
  void (*gemv)(const double* w, const double* bias, const double* x, double* y,
               std::size_t rows, std::size_t cols);
  // y = (1 - tau) * y + tau * x
  void (*lerp)(double tau, const double* x, double* y, std::size_t n);
  // Bias-corrected Adam update over n parameters. step_size is
  // lr / (1 - beta1^t), inv_bc2 is 1 / (1 - beta2^t).
  void (*adam)(double* param, const double* grad, double* m, double* v,
               std::size_t n, double beta1, double beta2, double step_size,
               double inv_bc2, double eps);
  // x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);
};

const KernelTable& scalar_table();
// Returns nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Variant v);

// Table used by the rest of the library.
const KernelTable& active();

// Forces a variant. Returns false (and leaves the selection unchanged) when
// the CPU or the build cannot run it.
bool select(Variant v);

std::string_view name(Variant v);

}  // namespace rlrelay::kernels
