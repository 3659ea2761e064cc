#pragma once

// Data-parallel inner loops used by the solver, the projections and the
// pooling code. Each kernel has a scalar reference implementation plus
// SIMD variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is picked
// once at startup from CPU features and can be overridden with the
// OTMEL_KERNELS environment variable (scalar | avx2 | neon | auto) or with
// force_backend().
//
// SIMD variants reassociate sums, so results agree with the scalar kernels
// to rounding, not bit for bit. Within one backend every kernel is
// deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace otmel::kernels {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
  Backend backend;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // sum_i |a[i] - b[i]|
  double (*l1_dist)(const double* a, const double* b, std::size_t n);
  // max_i x[i]; n >= 1
  double (*max)(const double* x, std::size_t n);
  // out[i] = alpha * x[i] * y[i]
  void (*scaled_mul)(double alpha, const double* x, const double* y, double* out,
                     std::size_t n);
};

std::string_view backend_name(Backend b);

bool backend_supported(Backend b);

const KernelTable& table(Backend b);

// The table every library routine goes through.
const KernelTable& active();

// Throws std::invalid_argument when `b` is not supported on this CPU.
void force_backend(Backend b);

// RAII override, used by equivalence tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline double l1_dist(std::span<const double> a, std::span<const double> b) {
  return active().l1_dist(a.data(), b.data(), a.size());
}
inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }

namespace detail {
// Defined in the per-ISA translation units.
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace otmel::kernels
