#include <arm_neon.h>

#include "tl/simd.hpp"

namespace tl::simd::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  float64x2_t acc2 = vdupq_n_f64(0.0);
  float64x2_t acc3 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    acc2 = vfmaq_f64(acc2, vld1q_f64(a + i + 4), vld1q_f64(b + i + 4));
    acc3 = vfmaq_f64(acc3, vld1q_f64(a + i + 6), vld1q_f64(b + i + 6));
  }
  for (; i + 2 <= n; i += 2) acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
  double acc = vaddvq_f64(vaddq_f64(vaddq_f64(acc0, acc1), vaddq_f64(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void dot_rows_neon(const double* query, const double* rows, std::size_t n_rows, std::size_t dim,
                   double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) out[r] = dot_neon(query, rows + r * dim, dim);
}

void ellipse_metric_sq_neon(double x, double y, double rx, double ry, const double* xs,
                            const double* ys, const double* rxs, const double* rys, std::size_t n,
                            double pad, double* out) {
  const float64x2_t vx = vdupq_n_f64(x);
  const float64x2_t vy = vdupq_n_f64(y);
  const float64x2_t vrx = vdupq_n_f64(rx + pad);
  const float64x2_t vry = vdupq_n_f64(ry + pad);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const float64x2_t u =
        vdivq_f64(vsubq_f64(vx, vld1q_f64(xs + k)), vaddq_f64(vrx, vld1q_f64(rxs + k)));
    const float64x2_t v =
        vdivq_f64(vsubq_f64(vy, vld1q_f64(ys + k)), vaddq_f64(vry, vld1q_f64(rys + k)));
    vst1q_f64(out + k, vaddq_f64(vmulq_f64(u, u), vmulq_f64(v, v)));
  }
  for (; k < n; ++k) {
    const double u = (x - xs[k]) / (rx + pad + rxs[k]);
    const double v = (y - ys[k]) / (ry + pad + rys[k]);
    out[k] = u * u + v * v;
  }
}

}  // namespace

const KernelTable& neon_table() noexcept {
  static const KernelTable table{dot_neon, dot_rows_neon, ellipse_metric_sq_neon};
  return table;
}

}  // namespace tl::simd::detail
