#include "otmel/kernels.hpp"

#include <cmath>

namespace otmel::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double l1_dist_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
  return acc;
}

double max_scalar(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

void scaled_mul_scalar(double alpha, const double* x, const double* y, double* out,
                       std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i] * y[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Backend::scalar, dot_scalar,     axpy_scalar,      sum_scalar,
                             l1_dist_scalar,  max_scalar,     scaled_mul_scalar};
  return t;
}

}  // namespace otmel::kernels::detail
