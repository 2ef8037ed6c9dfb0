#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "tl/digest.hpp"
#include "tl/simd.hpp"

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  for (auto& x : v) x = tl::unit_double(tl::splitmix64(seed)) * 4.0 - 2.0;
  return v;
}

}  // namespace

TEST_CASE("scalar backend is always available") {
  CHECK(tl::simd::backend_available(tl::simd::Backend::scalar));
  const auto all = tl::simd::available_backends();
  REQUIRE_FALSE(all.empty());
  CHECK(all.front() == tl::simd::Backend::scalar);
  CHECK(tl::simd::backend_available(tl::simd::active_backend()));
}

TEST_CASE("every backend agrees with the scalar reference") {
  const auto& ref = tl::simd::kernels(tl::simd::Backend::scalar);
  for (auto backend : tl::simd::available_backends()) {
    CAPTURE(tl::simd::backend_name(backend));
    const auto& k = tl::simd::kernels(backend);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 64u, 384u, 1001u}) {
      const auto a = random_vector(n, 11 + n);
      const auto b = random_vector(n, 97 + n);
      const double want = ref.dot(a.data(), b.data(), n);
      const double got = k.dot(a.data(), b.data(), n);
      CHECK(std::abs(got - want) <= 1e-12 * (1.0 + static_cast<double>(n)));

      const std::size_t rows = 5;
      const auto m = random_vector(n * rows, 5 + n);
      std::vector<double> want_rows(rows), got_rows(rows);
      ref.dot_rows(a.data(), m.data(), rows, n, want_rows.data());
      k.dot_rows(a.data(), m.data(), rows, n, got_rows.data());
      for (std::size_t r = 0; r < rows; ++r) {
        CHECK(std::abs(got_rows[r] - want_rows[r]) <= 1e-12 * (1.0 + static_cast<double>(n)));
      }

      auto xs = random_vector(n, 1), ys = random_vector(n, 2);
      auto rxs = random_vector(n, 3), rys = random_vector(n, 4);
      for (auto& r : rxs) r = std::abs(r) + 0.5;
      for (auto& r : rys) r = std::abs(r) + 0.5;
      std::vector<double> want_m(n), got_m(n);
      ref.ellipse_metric_sq(0.25, -0.5, 1.0, 0.75, xs.data(), ys.data(), rxs.data(), rys.data(), n,
                            0.1, want_m.data());
      k.ellipse_metric_sq(0.25, -0.5, 1.0, 0.75, xs.data(), ys.data(), rxs.data(), rys.data(), n,
                          0.1, got_m.data());
      // Layout decisions branch on this value, so it must round identically.
      CHECK(got_m == want_m);
    }
  }
}

TEST_CASE("ellipse metric reference values") {
  const auto& k = tl::simd::kernels(tl::simd::Backend::scalar);
  const double xs[] = {3.0, 0.0}, ys[] = {0.0, 0.0}, rxs[] = {1.0, 1.0}, rys[] = {1.0, 1.0};
  double out[2];
  k.ellipse_metric_sq(0.0, 0.0, 2.0, 1.0, xs, ys, rxs, rys, 2, 0.0, out);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == 0.0);
}

TEST_CASE("digests") {
  CHECK(tl::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(tl::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(tl::hex64(255) == "00000000000000ff");
  CHECK(tl::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
