#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>

#include "evrf/metrics.hpp"

using namespace evrf;

namespace {

Image noisy_image(int w, int h, int c, double base, double amp, unsigned seed) {
  Image img(w, h, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-amp, amp);
  for (double& v : img.data) v = base + uni(rng);
  return img;
}

}  // namespace

TEST_CASE("psnr") {
  const Image a = noisy_image(16, 16, 3, 0.5, 0.3, 61);
  SECTION("identical images cap at 99 dB") {
    bool capped = false;
    CHECK(psnr(a, a, 1.0, &capped) == 99.0);
    CHECK(capped);
  }
  SECTION("known MSE values") {
    Image b = a;
    // Offset every pixel by 0.1: MSE = 0.01 -> 20 dB.
    for (double& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == Catch::Approx(20.0).margin(1e-9));
    Image c = a;
    for (double& v : c.data) v += 0.5;  // MSE = 0.25 -> 6.0206 dB
    CHECK(psnr(a, c) == Catch::Approx(10.0 * std::log10(4.0)).margin(1e-9));
  }
  SECTION("symmetry and dimension checks") {
    const Image b = noisy_image(16, 16, 3, 0.5, 0.3, 62);
    CHECK(psnr(a, b) == Catch::Approx(psnr(b, a)));
    const Image wrong(8, 8, 3);
    CHECK_THROWS_AS(psnr(a, wrong), std::invalid_argument);
  }
}

TEST_CASE("ssim") {
  SECTION("identical images give 1") {
    const Image a = noisy_image(24, 24, 1, 0.5, 0.4, 63);
    CHECK(ssim(a, a) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("constant images: luminance term only") {
    Image a(16, 16, 1), b(16, 16, 1);
    for (double& v : a.data) v = 0.25;
    for (double& v : b.data) v = 0.75;
    // Zero variance: SSIM = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
    const double c1 = 1e-4;
    const double expect = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    CHECK(ssim(a, b) == Catch::Approx(expect).margin(1e-12));
  }
  SECTION("anti-correlated structure drives SSIM down") {
    Image a(24, 24, 1), b(24, 24, 1);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const double v = 0.5 + 0.4 * std::sin(0.7 * x) * std::cos(0.9 * y);
        a.at(x, y, 0) = v;
        b.at(x, y, 0) = 1.0 - v;
      }
    CHECK(ssim(a, b) < 0.0);
    CHECK(ssim(a, b) >= -1.0);
  }
  SECTION("small images rejected") {
    const Image tiny(8, 8, 1);
    CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
  }
}

TEST_CASE("trajectory error") {
  std::vector<Pose> poses;
  for (int i = 0; i < 20; ++i) {
    const double t = 0.1 * i;
    poses.push_back({quat_from_axis_angle({0.1, 1.0, 0.3}, 0.2 * t),
                     Vec3d{std::cos(t), std::sin(t), 0.2 * t}, t});
  }
  const Trajectory ref(poses);

  SECTION("identical trajectories give zero") {
    const TrajectoryError e = traj_error(ref, ref);
    // quat_angle hits acos near 1, so allow its square-root roundoff.
    CHECK(e.re_deg == Catch::Approx(0.0).margin(1e-6));
    CHECK(e.te_units == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("a globally transformed copy aligns back to zero") {
    SimTransform tf;
    tf.scale = 1.7;
    tf.rotation = quat_from_axis_angle({0.0, 0.0, 1.0}, 0.8);
    tf.translation = {2.0, -1.0, 0.5};
    const Trajectory moved = apply(tf, ref);
    const TrajectoryError e = traj_error(moved, ref);
    CHECK(e.re_deg == Catch::Approx(0.0).margin(1e-6));
    CHECK(e.te_units == Catch::Approx(0.0).margin(1e-9));
  }
  SECTION("uniform 2-degree rotation offset reports RE = 2") {
    std::vector<Pose> perturbed = ref.poses();
    const Quatd dq = quat_from_axis_angle({0.0, 0.0, 1.0}, 2.0 * M_PI / 180.0);
    for (Pose& p : perturbed) p.rotation = quat_normalized(dq * p.rotation);
    const TrajectoryError e = traj_error(Trajectory(perturbed), ref);
    CHECK(e.re_deg == Catch::Approx(2.0).margin(1e-6));
    CHECK(e.te_units == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("raw image round trip and png writing") {
  Image img = noisy_image(20, 14, 3, 0.5, 0.5, 67);
  const std::string raw_path = "/tmp/evrf_test_image.raw";
  const std::string png_path = "/tmp/evrf_test_image.png";
  save_raw(raw_path, img);
  const Image back = load_raw(raw_path);
  REQUIRE(back.width == 20);
  REQUIRE(back.channels == 3);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == Catch::Approx(img.data[i]).margin(1e-6));

  save_png(png_path, img);
  std::FILE* f = std::fopen(png_path.c_str(), "rb");
  REQUIRE(f != nullptr);
  unsigned char sig[8];
  REQUIRE(std::fread(sig, 1, 8, f) == 8);
  std::fclose(f);
  CHECK(sig[0] == 0x89);
  CHECK(sig[1] == 'P');
  std::remove(raw_path.c_str());
  std::remove(png_path.c_str());
}
