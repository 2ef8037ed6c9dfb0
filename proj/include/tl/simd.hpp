#pragma once

// Data-parallel inner loops used by similarity scoring and layout collision.
//
// Every kernel has a scalar reference implementation; AVX2+FMA (x86-64) and
// NEON (AArch64) variants are compiled when the toolchain targets them and
// chosen at runtime. TL_SIMD=scalar|avx2|neon in the environment forces a
// backend (unavailable choices fall back to scalar).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace tl::simd {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend backend) noexcept;

// Compiled in and supported by the running CPU.
bool backend_available(Backend backend) noexcept;

std::vector<Backend> available_backends();

// Resolved once per process.
Backend active_backend() noexcept;

struct KernelTable {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  // out[r] = dot(query, rows + r * dim) for r in [0, n_rows)
  void (*dot_rows)(const double* query, const double* rows, std::size_t n_rows, std::size_t dim,
                   double* out);

  // Squared normalized ellipse distance between one ellipse and a batch:
  //   out[k] = ((x - xs[k]) / (rx + rxs[k] + pad))^2 + ((y - ys[k]) / (ry + rys[k] + pad))^2
  // Values >= 1 mean the padded ellipses do not overlap.
  void (*ellipse_metric_sq)(double x, double y, double rx, double ry, const double* xs,
                            const double* ys, const double* rxs, const double* rys, std::size_t n,
                            double pad, double* out);
};

const KernelTable& kernels(Backend backend) noexcept;

inline const KernelTable& kernels() noexcept { return kernels(active_backend()); }

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return kernels().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

namespace detail {
const KernelTable& scalar_table() noexcept;
#if defined(TL_HAVE_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(TL_HAVE_NEON)
const KernelTable& neon_table() noexcept;
#endif
}  // namespace detail

}  // namespace tl::simd
