#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evrf/color.hpp"

using namespace evrf;

TEST_CASE("affine fit recovers exact relations") {
  std::vector<double> x{0.0, 0.5, 1.0, 1.5, 2.0};
  SECTION("identity") {
    const AffineChannel c = fit_affine(x, x);
    CHECK(c.gain == Catch::Approx(1.0));
    CHECK(c.offset == Catch::Approx(0.0).margin(1e-12));
    CHECK(c.residual == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("y = 2x + 3") {
    std::vector<double> y;
    for (double v : x) y.push_back(2.0 * v + 3.0);
    const AffineChannel c = fit_affine(x, y);
    CHECK(c.gain == Catch::Approx(2.0));
    CHECK(c.offset == Catch::Approx(3.0));
    CHECK(c.residual == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("scaling references scales gain and offset exactly") {
    std::vector<double> y;
    for (double v : x) y.push_back(1.7 * v - 0.4);
    const AffineChannel c1 = fit_affine(x, y);
    for (double& v : y) v *= 5.0;
    const AffineChannel c5 = fit_affine(x, y);
    CHECK(c5.gain == Catch::Approx(5.0 * c1.gain));
    CHECK(c5.offset == Catch::Approx(5.0 * c1.offset));
  }
  SECTION("symmetric noise leaves the estimates unbiased") {
    std::mt19937_64 rng(51);
    std::normal_distribution<double> noise(0.0, 0.05);
    const int trials = 300, n = 50;
    double sum_a = 0.0, sum_b = 0.0;
    for (int t = 0; t < trials; ++t) {
      std::vector<double> xs(n), ys(n);
      for (int i = 0; i < n; ++i) {
        xs[i] = 0.1 * i;
        ys[i] = 1.5 * xs[i] + 0.7 + noise(rng);
      }
      const AffineChannel c = fit_affine(xs, ys);
      sum_a += c.gain;
      sum_b += c.offset;
    }
    // 3 sigma of the OLS standard error of the mean over the trials.
    CHECK(std::fabs(sum_a / trials - 1.5) < 0.01);
    CHECK(std::fabs(sum_b / trials - 0.7) < 0.02);
  }
  SECTION("degenerate predictor rejected") {
    std::vector<double> flat(5, 1.0);
    CHECK_THROWS_AS(fit_affine(flat, x), std::runtime_error);
    CHECK_THROWS_AS(fit_affine({1.0}, {1.0}), std::invalid_argument);
  }
}

TEST_CASE("per-channel RGB affine fit") {
  std::vector<double> x{0.0, 0.3, 0.9, 1.4, 2.0};
  std::vector<Vec3d> ref;
  for (double v : x) ref.push_back({2.0 * v, -v + 1.0, 0.5 * v + 0.25});
  const AffineCorrection c = fit_affine_rgb(x, ref);
  const Vec3d out = c.apply(1.0);
  CHECK(out.x == Catch::Approx(2.0));
  CHECK(out.y == Catch::Approx(0.0).margin(1e-12));
  CHECK(out.z == Catch::Approx(0.75));
}

TEST_CASE("color network output is bounded") {
  ColorNet net;
  std::mt19937_64 rng(53);
  net.init(rng);
  for (double v : {-50.0, -1.0, 0.0, 0.7, 50.0}) {
    const Vec3d c = net.apply(v);
    for (int i = 0; i < 3; ++i) {
      CHECK(c[i] >= 0.0);
      CHECK(c[i] <= 1.0);
    }
  }
}

TEST_CASE("color network fits a constant dataset") {
  ColorNet net;
  std::mt19937_64 rng(57);
  net.init(rng);
  std::vector<double> x(32);
  std::vector<Vec3d> ref(32, Vec3d{0.3, 0.6, 0.9});
  for (int i = 0; i < 32; ++i) x[i] = 0.1 * i - 1.0;
  net.fit(x, ref, 2000, 0.02);
  for (double v : {-0.9, 0.0, 1.8}) {
    const Vec3d c = net.apply(v);
    CHECK(c.x == Catch::Approx(0.3).margin(1e-3));
    CHECK(c.y == Catch::Approx(0.6).margin(1e-3));
    CHECK(c.z == Catch::Approx(0.9).margin(1e-3));
  }
}

TEST_CASE("color network fits a smooth non-affine map better than affine") {
  ColorNet net;
  std::mt19937_64 rng(59);
  net.init(rng);
  std::vector<double> x;
  std::vector<Vec3d> ref;
  for (int i = 0; i < 64; ++i) {
    const double v = -2.0 + 4.0 * i / 63.0;
    x.push_back(v);
    const double y = 1.0 / (1.0 + std::exp(-2.0 * v));  // saturating response
    ref.push_back({y, y * y, 0.5 + 0.4 * std::sin(y)});
  }
  const double net_mse = net.fit(x, ref, 4000, 0.02);
  const AffineCorrection aff = fit_affine_rgb(x, ref);
  const double aff_mse = (aff.r.residual + aff.g.residual + aff.b.residual) / 3.0;
  CHECK(net_mse < aff_mse);
}
