#include "gapctl/kernels/dense.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace gapctl::kernels;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return worst;
}

struct Shape {
  int batch, in, out;
};

// Sizes straddle the 4-wide vector width and the 4-row output blocking.
const Shape kShapes[] = {{1, 1, 1}, {3, 5, 7}, {8, 156, 112}, {17, 112, 66}, {2, 13, 9}, {5, 4, 4}, {4, 33, 31}};

}  // namespace

TEST_CASE("scalar kernels compute the textbook formulas") {
  const auto& k = scalar_kernels();
  const std::vector<double> w{1, 2, 3, 4, 5, 6};  // 2 x 3
  const std::vector<double> b{0.5, -1};
  const std::vector<double> x{1, 0, -1};
  std::vector<double> y(2);
  k.forward(w.data(), b.data(), x.data(), y.data(), 1, 3, 2);
  CHECK(y[0] == doctest::Approx(0.5 + 1 - 3));
  CHECK(y[1] == doctest::Approx(-1 + 4 - 6));

  std::vector<double> dx(3);
  const std::vector<double> dy{1, 2};
  k.backward_input(w.data(), dy.data(), dx.data(), 1, 3, 2);
  CHECK(dx[0] == doctest::Approx(1 + 8));
  CHECK(dx[2] == doctest::Approx(3 + 12));

  std::vector<double> dw(6, 0.0), db(2, 0.0);
  k.accumulate_gradient(dy.data(), x.data(), dw.data(), db.data(), 1, 3, 2);
  CHECK(dw[3] == doctest::Approx(2.0));
  CHECK(dw[5] == doctest::Approx(-2.0));
  CHECK(db[1] == doctest::Approx(2.0));
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const DenseKernels* simd = avx2_kernels();
  if (!simd || !cpu_supports_avx2()) {
    MESSAGE("no AVX2 on this machine; equivalence not exercised");
    return;
  }
  const auto& ref = scalar_kernels();
  std::mt19937_64 rng(99);
  for (const auto& s : kShapes) {
    CAPTURE(s.batch);
    CAPTURE(s.in);
    CAPTURE(s.out);
    const auto w = random_vector(rng, static_cast<std::size_t>(s.in) * s.out);
    const auto b = random_vector(rng, s.out);
    const auto x = random_vector(rng, static_cast<std::size_t>(s.batch) * s.in);
    const auto dy = random_vector(rng, static_cast<std::size_t>(s.batch) * s.out);

    std::vector<double> y1(static_cast<std::size_t>(s.batch) * s.out), y2(y1.size());
    ref.forward(w.data(), b.data(), x.data(), y1.data(), s.batch, s.in, s.out);
    simd->forward(w.data(), b.data(), x.data(), y2.data(), s.batch, s.in, s.out);
    CHECK(max_rel_diff(y1, y2) < 1e-12);

    std::vector<double> dx1(static_cast<std::size_t>(s.batch) * s.in, 7.0), dx2(dx1.size(), -3.0);
    ref.backward_input(w.data(), dy.data(), dx1.data(), s.batch, s.in, s.out);
    simd->backward_input(w.data(), dy.data(), dx2.data(), s.batch, s.in, s.out);
    CHECK(max_rel_diff(dx1, dx2) < 1e-12);

    auto dw1 = random_vector(rng, w.size());
    auto db1 = random_vector(rng, b.size());
    auto dw2 = dw1, db2 = db1;
    ref.accumulate_gradient(dy.data(), x.data(), dw1.data(), db1.data(), s.batch, s.in, s.out);
    simd->accumulate_gradient(dy.data(), x.data(), dw2.data(), db2.data(), s.batch, s.in, s.out);
    CHECK(max_rel_diff(dw1, dw2) < 1e-12);
    CHECK(max_rel_diff(db1, db2) < 1e-12);
  }
}

TEST_CASE("avx2 adam update matches the scalar reference") {
  const DenseKernels* simd = avx2_kernels();
  if (!simd || !cpu_supports_avx2()) return;
  std::mt19937_64 rng(5);
  for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 1001u}) {
    auto p1 = random_vector(rng, n), g = random_vector(rng, n);
    auto m1 = random_vector(rng, n), v1 = random_vector(rng, n);
    for (auto& v : v1) v = std::abs(v);
    auto p2 = p1, m2 = m1, v2 = v1;
    const AdamStep step{1e-3, 0.9, 0.999, 1e-8, 1 - std::pow(0.9, 3), 1 - std::pow(0.999, 3)};
    scalar_kernels().adam_update(p1.data(), g.data(), m1.data(), v1.data(), n, step);
    simd->adam_update(p2.data(), g.data(), m2.data(), v2.data(), n, step);
    CHECK(max_rel_diff(p1, p2) < 1e-13);
    CHECK(max_rel_diff(m1, m2) < 1e-13);
    CHECK(max_rel_diff(v1, v2) < 1e-13);
  }
}

TEST_CASE("kernel selection can be forced and restored") {
  const Isa initial = active_kernels().isa;
  CHECK(select_kernels(Isa::Scalar));
  CHECK(active_kernels().isa == Isa::Scalar);
  if (avx2_kernels() && cpu_supports_avx2()) {
    CHECK(select_kernels(Isa::Avx2));
    CHECK(active_kernels().isa == Isa::Avx2);
  } else {
    CHECK_FALSE(select_kernels(Isa::Avx2));
  }
  select_kernels(initial);
}
