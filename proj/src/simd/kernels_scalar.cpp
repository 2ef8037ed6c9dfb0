#include "tl/simd.hpp"

namespace tl::simd::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void dot_rows_scalar(const double* query, const double* rows, std::size_t n_rows, std::size_t dim,
                     double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) out[r] = dot_scalar(query, rows + r * dim, dim);
}

void ellipse_metric_sq_scalar(double x, double y, double rx, double ry, const double* xs,
                              const double* ys, const double* rxs, const double* rys,
                              std::size_t n, double pad, double* out) {
  for (std::size_t k = 0; k < n; ++k) {
    const double u = (x - xs[k]) / (rx + pad + rxs[k]);
    const double v = (y - ys[k]) / (ry + pad + rys[k]);
    out[k] = u * u + v * v;
  }
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{dot_scalar, dot_rows_scalar, ellipse_metric_sq_scalar};
  return table;
}

}  // namespace tl::simd::detail
