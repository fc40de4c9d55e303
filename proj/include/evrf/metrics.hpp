#pragma once

// Evaluation metrics: PSNR, SSIM (11x11 Gaussian window), and trajectory
// errors (rotation / translation after Sim(3) alignment).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evrf/image_io.hpp"
#include "evrf/trajectory.hpp"

namespace evrf {

constexpr double kPsnrCap = 99.0;

// 10 log10(peak^2 / MSE), capped at 99 dB for identical images.
inline double psnr(const Image& a, const Image& b, double peak = 1.0,
                   bool* capped = nullptr) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("psnr: image dimensions differ");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
  if (capped) *capped = false;
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) {
    if (capped) *capped = true;
    return kPsnrCap;
  }
  const double v = 10.0 * std::log10(peak * peak / mse);
  if (v >= kPsnrCap) {
    if (capped) *capped = true;
    return kPsnrCap;
  }
  return v;
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(11 * 11);
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double dx = x - 5.0, dy = y - 5.0;
        k[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        sum += k[y * 11 + x];
      }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

}  // namespace detail

// Mean local SSIM over all fully covered 11x11 windows, averaged over
// channels; K1 = 0.01, K2 = 0.03, dynamic range 1.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("ssim: image dimensions differ");
  if (a.width < 11 || a.height < 11)
    throw std::invalid_argument("ssim: images must be at least 11x11");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto& win = detail::ssim_window();
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y + 11 <= a.height; ++y)
      for (int x = 0; x + 11 <= a.width; ++x) {
        double mu_a = 0.0, mu_b = 0.0;
        for (int wy = 0; wy < 11; ++wy)
          for (int wx = 0; wx < 11; ++wx) {
            const double w = win[wy * 11 + wx];
            mu_a += w * a.at(x + wx, y + wy, c);
            mu_b += w * b.at(x + wx, y + wy, c);
          }
        double var_a = 0.0, var_b = 0.0, cov = 0.0;
        for (int wy = 0; wy < 11; ++wy)
          for (int wx = 0; wx < 11; ++wx) {
            const double w = win[wy * 11 + wx];
            const double da = a.at(x + wx, y + wy, c) - mu_a;
            const double db = b.at(x + wx, y + wy, c) - mu_b;
            var_a += w * da * da;
            var_b += w * db * db;
            cov += w * da * db;
          }
        total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

struct TrajectoryError {
  double re_deg{0.0};  // mean geodesic rotation angle
  double te_units{0.0};  // mean translation norm
};

// Errors after Sim(3) alignment of the estimate onto the reference,
// averaged over the estimated timestamps inside the reference span.
inline TrajectoryError traj_error(const Trajectory& estimated,
                                  const Trajectory& reference) {
  const SimTransform tf = align(estimated, reference);
  const Trajectory aligned = apply(tf, estimated);
  TrajectoryError err;
  std::size_t n = 0;
  for (const Pose& p : aligned.poses()) {
    if (p.timestamp < reference.t_begin() || p.timestamp > reference.t_end())
      continue;
    const Pose r = reference.interpolate(p.timestamp);
    err.re_deg += quat_angle(p.rotation, r.rotation) * 180.0 / M_PI;
    err.te_units += norm(p.translation - r.translation);
    ++n;
  }
  if (n == 0) throw std::runtime_error("traj_error: no matched timestamps");
  err.re_deg /= static_cast<double>(n);
  err.te_units /= static_cast<double>(n);
  return err;
}

}  // namespace evrf
