// Compiled with -mavx2 -mfma; only entered after a runtime CPU check.
// The ellipse kernel avoids FMA so it rounds exactly like the scalar one.
#include <immintrin.h>

#include "tl/simd.hpp"

namespace tl::simd::detail {
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
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void dot_rows_avx2(const double* query, const double* rows, std::size_t n_rows, std::size_t dim,
                   double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) out[r] = dot_avx2(query, rows + r * dim, dim);
}

void ellipse_metric_sq_avx2(double x, double y, double rx, double ry, const double* xs,
                            const double* ys, const double* rxs, const double* rys, std::size_t n,
                            double pad, double* out) {
  const __m256d vx = _mm256_set1_pd(x);
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vrx = _mm256_set1_pd(rx + pad);
  const __m256d vry = _mm256_set1_pd(ry + pad);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d u = _mm256_div_pd(_mm256_sub_pd(vx, _mm256_loadu_pd(xs + k)),
                                    _mm256_add_pd(vrx, _mm256_loadu_pd(rxs + k)));
    const __m256d v = _mm256_div_pd(_mm256_sub_pd(vy, _mm256_loadu_pd(ys + k)),
                                    _mm256_add_pd(vry, _mm256_loadu_pd(rys + k)));
    _mm256_storeu_pd(out + k, _mm256_add_pd(_mm256_mul_pd(u, u), _mm256_mul_pd(v, v)));
  }
  for (; k < n; ++k) {
    const double u = (x - xs[k]) / (rx + pad + rxs[k]);
    const double v = (y - ys[k]) / (ry + pad + rys[k]);
    out[k] = u * u + v * v;
  }
}

}  // namespace

const KernelTable& avx2_table() noexcept {
  static const KernelTable table{dot_avx2, dot_rows_avx2, ellipse_metric_sq_avx2};
  return table;
}

}  // namespace tl::simd::detail
