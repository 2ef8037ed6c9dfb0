#include <cstdlib>
#include <string_view>

#include "tl/simd.hpp"

namespace tl::simd {
namespace {

bool cpu_supports(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(TL_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(TL_HAVE_NEON)
      return true;  // mandatory on AArch64
#else
      return false;
#endif
  }
  return false;
}

Backend resolve() noexcept {
  if (const char* forced = std::getenv("TL_SIMD")) {
    const std::string_view name(forced);
    for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
      if (name == backend_name(b)) return cpu_supports(b) ? b : Backend::scalar;
    }
  }
  if (cpu_supports(Backend::avx2)) return Backend::avx2;
  if (cpu_supports(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

}  // namespace

std::string_view backend_name(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
  }
  return "unknown";
}

bool backend_available(Backend backend) noexcept { return cpu_supports(backend); }

std::vector<Backend> available_backends() {
  std::vector<Backend> out;
  for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
    if (cpu_supports(b)) out.push_back(b);
  }
  return out;
}

Backend active_backend() noexcept {
  static const Backend backend = resolve();
  return backend;
}

const KernelTable& kernels(Backend backend) noexcept {
  switch (backend) {
#if defined(TL_HAVE_AVX2)
    case Backend::avx2:
      if (cpu_supports(backend)) return detail::avx2_table();
      break;
#endif
#if defined(TL_HAVE_NEON)
    case Backend::neon:
      return detail::neon_table();
#endif
    default:
      break;
  }
  return detail::scalar_table();
}

}  // namespace tl::simd
