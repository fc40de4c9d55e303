#pragma once

// Color correction: map reconstructed log-radiance to displayable color,
// either with a per-channel affine ordinary-least-squares fit against
// reference pixels or with a small learned network (sigmoid output).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evrf/mlp.hpp"

namespace evrf {

struct AffineChannel {
  double gain{1.0};
  double offset{0.0};
  double residual{0.0};  // mean squared fit residual
};

// Closed-form OLS of y ~ gain * x + offset for one channel.
inline AffineChannel fit_affine(const std::vector<double>& x,
                                const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n)
    throw std::invalid_argument("fit_affine: need >= 2 paired samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 1e-300)
    throw std::runtime_error("fit_affine: zero-variance predictor");
  AffineChannel c;
  c.gain = sxy / sxx;
  c.offset = my - c.gain * mx;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = c.gain * x[i] + c.offset - y[i];
    c.residual += r * r;
  }
  c.residual /= n;
  return c;
}

// Three channels fit against the same mono log-radiance predictor.
struct AffineCorrection {
  AffineChannel r, g, b;

  Vec3d apply(double log_l) const {
    return {r.gain * log_l + r.offset, g.gain * log_l + g.offset,
            b.gain * log_l + b.offset};
  }
};

inline AffineCorrection fit_affine_rgb(const std::vector<double>& log_l,
                                       const std::vector<Vec3d>& ref) {
  if (ref.size() != log_l.size())
    throw std::invalid_argument("fit_affine_rgb: size mismatch");
  std::vector<double> ch(log_l.size());
  AffineCorrection out;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < ref.size(); ++i) ch[i] = ref[i][c];
    (c == 0 ? out.r : c == 1 ? out.g : out.b) = fit_affine(log_l, ch);
  }
  return out;
}

// Learned pointwise correction: mono log-radiance -> RGB in [0,1]^3 via a
// 2x64 softplus MLP with a sigmoid output.
class ColorNet {
 public:
  ColorNet() : mlp_({1, 64, 64, 3}) {}

  void init(std::mt19937_64& rng) { mlp_.init(rng); }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  Vec3d apply(double log_l) const {
    thread_local MlpTape<double> tape;
    thread_local std::vector<double> raw;
    mlp_.forward(std::vector<double>{log_l}, tape, raw);
    return {sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])};
  }

  // Full-batch Adam fit against reference colors; returns the final MSE.
  double fit(const std::vector<double>& log_l, const std::vector<Vec3d>& ref,
             int iterations, double lr = 0.01) {
    if (log_l.empty() || ref.size() != log_l.size())
      throw std::invalid_argument("ColorNet::fit: bad dataset");
    const std::size_t np = mlp_.param_count();
    std::vector<double> grad(np), m(np, 0.0), v(np, 0.0);
    MlpTape<double> tape;
    std::vector<double> raw, d_raw(3);
    double mse = 0.0;
    for (int it = 1; it <= iterations; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      mse = 0.0;
      for (std::size_t i = 0; i < log_l.size(); ++i) {
        mlp_.forward(std::vector<double>{log_l[i]}, tape, raw);
        for (int c = 0; c < 3; ++c) {
          const double s = sigmoid(raw[c]);
          const double diff = s - ref[i][c];
          mse += diff * diff;
          d_raw[c] = 2.0 * diff * s * (1.0 - s) / (3.0 * log_l.size());
        }
        mlp_.backward(tape, d_raw, grad, static_cast<std::vector<double>*>(nullptr));
      }
      mse /= 3.0 * log_l.size();
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, it), c2 = 1.0 - std::pow(b2, it);
      for (std::size_t p = 0; p < np; ++p) {
        m[p] = b1 * m[p] + (1.0 - b1) * grad[p];
        v[p] = b2 * v[p] + (1.0 - b2) * grad[p] * grad[p];
        mlp_.weights()[p] -= lr * (m[p] / c1) / (std::sqrt(v[p] / c2) + eps);
      }
    }
    return mse;
  }

 private:
  Mlp mlp_;
};

}  // namespace evrf
