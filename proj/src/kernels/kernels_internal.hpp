#pragma once

#include <cstddef>

#include "rlrelay/kernels.hpp"

namespace rlrelay::kernels {

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const double* w, const double* bias, const double* x, double* y,
          std::size_t rows, std::size_t cols);
void lerp(double tau, const double* x, double* y, std::size_t n);
void adam(double* param, const double* grad, double* m, double* v,
          std::size_t n, double beta1, double beta2, double step_size,
          double inv_bc2, double eps);
void relu(double* x, std::size_t n);
}  // namespace scalar

#if defined(RLRELAY_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const double* w, const double* bias, const double* x, double* y,
          std::size_t rows, std::size_t cols);
void lerp(double tau, const double* x, double* y, std::size_t n);
void adam(double* param, const double* grad, double* m, double* v,
          std::size_t n, double beta1, double beta2, double step_size,
          double inv_bc2, double eps);
void relu(double* x, std::size_t n);
}  // namespace avx2
#endif

}  // namespace rlrelay::kernels
