#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "otmel/kernels.hpp"

namespace otmel::kernels {

namespace detail {
#if !defined(OTMEL_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(OTMEL_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif
}  // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(OTMEL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend best_backend() {
  if (backend_supported(Backend::avx2)) return Backend::avx2;
  if (backend_supported(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

Backend initial_backend() {
  const char* env = std::getenv("OTMEL_KERNELS");
  if (env == nullptr) return best_backend();
  const std::string want(env);
  if (want == "scalar") return Backend::scalar;
  if (want == "avx2" && backend_supported(Backend::avx2)) return Backend::avx2;
  if (want == "neon" && backend_supported(Backend::neon)) return Backend::neon;
  return best_backend();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> t{&table(initial_backend())};
  return t;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2: return detail::avx2_table() != nullptr && cpu_has_avx2();
    case Backend::neon: return detail::neon_table() != nullptr;
  }
  return false;
}

const KernelTable& table(Backend b) {
  if (!backend_supported(b))
    throw std::invalid_argument("kernel backend not supported: " + std::string(backend_name(b)));
  switch (b) {
    case Backend::avx2: return *detail::avx2_table();
    case Backend::neon: return *detail::neon_table();
    case Backend::scalar: break;
  }
  return detail::scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void force_backend(Backend b) { current().store(&table(b), std::memory_order_release); }

ScopedBackend::ScopedBackend(Backend b) : previous_(active().backend) { force_backend(b); }

ScopedBackend::~ScopedBackend() { force_backend(previous_); }

}  // namespace otmel::kernels
