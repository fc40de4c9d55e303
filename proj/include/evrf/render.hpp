#pragma once

// Differentiable volume rendering along event-camera rays. The forward pass
// is templated on the scalar so the same graph yields plain values (double)
// or exact time derivatives (Dual with the tangent seeded on t). The
// backward pass is hand-coded reverse mode over the field parameters and,
// optionally, the ray origin / direction so gradients reach the pose model.
//
// Sample distances are treated as constants (stop-gradient): resampling is
// not differentiated through.

#include <vector>

#include "evrf/sampling.hpp"
#include "evrf/scene.hpp"

namespace evrf {

template <class S>
struct RayRender {
  Vec3<S> origin;
  Vec3<S> dir;                     // unit, world frame
  std::vector<double> t, delta;    // constants; delta_N reaches t_far
  std::vector<Vec3<S>> xs;         // unwarped sample positions
  std::vector<VanillaEval<S>> evals;
  std::vector<S> weights, trans;   // quadrature weights and transmittances
  S weight_sum{};
  Vec3<S> rgb;                     // composited, with the epsilon fill
  S mono{}, log_mono{};
  WarpMode warp_mode{WarpMode::kIdentity};
};

// Composite along a ray at fixed sample distances. The residual
// transmittance is filled with the radiance floor so the log is always
// finite: L = sum w_i c_i + (1 - sum w) eps.
template <class S>
void render_ray(const VanillaField& field, const Vec3<S>& origin,
                const Vec3<S>& dir, const std::vector<double>& t, double t_far,
                WarpMode mode, RayRender<S>& rr) {
  const std::size_t n = t.size();
  if (n == 0) throw std::invalid_argument("render_ray: no samples");
  rr.origin = origin;
  rr.dir = dir;
  rr.t = t;
  rr.warp_mode = mode;
  rr.delta.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i) rr.delta[i] = t[i + 1] - t[i];
  rr.delta[n - 1] = t_far - t[n - 1];
  for (std::size_t i = 0; i < n; ++i)
    if (!(rr.delta[i] >= 0.0))
      throw std::invalid_argument("render_ray: samples must be sorted within [.., t_far]");

  rr.xs.resize(n);
  rr.evals.resize(n);
  rr.weights.assign(n, S(0.0));
  rr.trans.assign(n, S(0.0));
  S depth = S(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    rr.xs[i] = origin + S(t[i]) * dir;
    field.eval(warp(rr.xs[i], mode), dir, rr.evals[i]);
    const S T = exp(S(-1.0) * depth);
    rr.trans[i] = T;
    rr.weights[i] = T * (S(1.0) - exp(S(-rr.delta[i]) * rr.evals[i].sigma));
    depth += S(rr.delta[i]) * rr.evals[i].sigma;
  }

  const double eps = field.config().radiance_floor;
  S wsum = S(0.0);
  Vec3<S> rgb{};
  for (std::size_t i = 0; i < n; ++i) {
    wsum += rr.weights[i];
    rgb += rr.weights[i] * rr.evals[i].color;
  }
  rr.weight_sum = wsum;
  rr.rgb = rgb + (S(1.0) - wsum) * Vec3<S>{S(eps), S(eps), S(eps)};
  rr.mono = S(kLumaR) * rr.rgb.x + S(kLumaG) * rr.rgb.y + S(kLumaB) * rr.rgb.z;
  rr.log_mono = log(rr.mono);
}

// Adjoint of the quadrature weights w.r.t. the densities, in the suffix
// form d_sigma_j = delta_j [ (T_j - w_j) dw_j - sum_{i>j} w_i dw_i ].
template <class S>
void weights_backward(const std::vector<double>& delta,
                      const std::vector<S>& weights, const std::vector<S>& trans,
                      const std::vector<S>& d_w, std::vector<S>& d_sigma) {
  const std::size_t n = weights.size();
  d_sigma.assign(n, S(0.0));
  S suffix = S(0.0);
  for (std::size_t j = n; j-- > 0;) {
    d_sigma[j] = S(delta[j]) * ((trans[j] - weights[j]) * d_w[j] - suffix);
    suffix += weights[j] * d_w[j];
  }
}

// d_log is dL/d(log_mono); d_w_extra optionally adds a direct adjoint on
// the quadrature weights (used by the distortion loss). Parameter gradients
// accumulate into grads; origin / direction adjoints into d_origin / d_dir
// when non-null.
template <class S>
void render_ray_backward(const VanillaField& field, const RayRender<S>& rr,
                         S d_log, const std::vector<S>* d_w_extra,
                         VanillaGrads& grads, Vec3<S>* d_origin,
                         Vec3<S>* d_dir) {
  const std::size_t n = rr.t.size();
  const double eps = field.config().radiance_floor;
  const S d_mono = d_log / rr.mono;
  const Vec3<S> d_rgb{S(kLumaR) * d_mono, S(kLumaG) * d_mono, S(kLumaB) * d_mono};

  static thread_local std::vector<S> d_w;
  d_w.assign(n, S(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3<S> ce{rr.evals[i].color.x - S(eps), rr.evals[i].color.y - S(eps),
                     rr.evals[i].color.z - S(eps)};
    d_w[i] = dot(d_rgb, ce);
    if (d_w_extra) d_w[i] += (*d_w_extra)[i];
  }

  static thread_local std::vector<S> d_sigma;
  weights_backward(rr.delta, rr.weights, rr.trans, d_w, d_sigma);

  for (std::size_t i = 0; i < n; ++i) {
    const Vec3<S> d_c = rr.weights[i] * d_rgb;
    Vec3<S> d_xw{}, d_view{};
    field.backward(rr.evals[i], d_sigma[i], d_c, grads, d_origin ? &d_xw : nullptr,
                   d_dir ? &d_view : nullptr);
    if (d_origin) {
      Vec3<S> d_x{};
      warp_backward(rr.xs[i], rr.warp_mode, d_xw, d_x);
      *d_origin += d_x;
      if (d_dir) *d_dir += S(rr.t[i]) * d_x + d_view;
    }
  }
}

template <class S>
struct PixelRender {
  Vec3d dir_cam;      // fixed camera-frame pixel direction
  Vec3<S> dir_world;  // rotated, before normalization
  RayRender<S> ray;
};

// Ray generation from a pose: rotate the pixel direction into the world
// frame, normalize, render. The pose quaternion must be unit-norm.
template <class S>
void render_pixel(const VanillaField& field, const Camera& cam,
                  const PoseT<S>& pose, int px, int py,
                  const std::vector<double>& t, double t_far, WarpMode mode,
                  PixelRender<S>& out) {
  if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
    throw std::out_of_range("render_pixel: pixel outside sensor");
  out.dir_cam = cam.pixel_direction(px, py);
  const Vec3<S> vc{S(out.dir_cam.x), S(out.dir_cam.y), S(out.dir_cam.z)};
  out.dir_world = rotate(pose.rotation, vc);
  render_ray(field, pose.translation, normalized(out.dir_world), t, t_far, mode,
             out.ray);
}

// Backward through normalization and rotation into the pose. The
// normalization adjoint is (d_d - d (d . d_d)) / ||u||.
template <class S>
void render_pixel_backward(const VanillaField& field, const PixelRender<S>& pr,
                           const PoseT<S>& pose, S d_log,
                           const std::vector<S>* d_w_extra, VanillaGrads& grads,
                           Quat<S>* d_rotation, Vec3<S>* d_translation) {
  const bool need_pose = d_rotation || d_translation;
  Vec3<S> d_o{}, d_d{};
  render_ray_backward(field, pr.ray, d_log, d_w_extra, grads,
                      need_pose ? &d_o : nullptr, need_pose ? &d_d : nullptr);
  if (!need_pose) return;
  if (d_translation) *d_translation += d_o;
  if (d_rotation) {
    const S inv = S(1.0) / norm(pr.dir_world);
    const Vec3<S> d_u = inv * (d_d - dot(d_d, pr.ray.dir) * pr.ray.dir);
    const Vec3<S> vc{S(pr.dir_cam.x), S(pr.dir_cam.y), S(pr.dir_cam.z)};
    rotate_backward(pose.rotation, vc, d_u, *d_rotation,
                    static_cast<Vec3<S>*>(nullptr));
  }
}

// Exact d/dt of the rendered log-radiance via a forward-mode tangent seeded
// on the pose time.
inline double time_gradient(const VanillaField& field, const Camera& cam,
                            const Trajectory& traj, int px, int py, double time,
                            const std::vector<double>& t, double t_far,
                            WarpMode mode) {
  const PoseT<Dual> pose = traj.sample(Dual(time, 1.0));
  PixelRender<Dual> pr;
  render_pixel(field, cam, pose, px, py, t, t_far, mode, pr);
  return pr.ray.log_mono.d;
}

// Expected ray distance under the quadrature weights (depth diagnostic).
inline double render_depth(const std::vector<double>& weights,
                           const std::vector<double>& t, bool* empty = nullptr) {
  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    wsum += weights[i];
    acc += weights[i] * t[i];
  }
  if (empty) *empty = wsum <= 0.0;
  return acc / std::max(wsum, 1e-9);
}

// Full pipeline for one pixel at a fixed pose: proposal-driven sampling,
// vanilla compositing. Returns the composited linear RGB.
inline Vec3d render_pixel_rgb(const VanillaField& vanilla,
                              const ProposalField& proposal, const Camera& cam,
                              const Pose& pose, int px, int py,
                              const RayBounds& bounds, int n_prop, int n_stages,
                              WarpMode mode, std::uint64_t seed) {
  const Vec3d dir =
      normalized(rotate(pose.rotation, cam.pixel_direction(px, py)));
  const TwoPhaseSamples s = two_phase_sample(proposal, pose.translation, dir,
                                             bounds, n_prop, n_stages, mode, seed);
  RayRender<double> rr;
  render_ray(vanilla, pose.translation, dir, s.vanilla_t, bounds.t_far, mode, rr);
  return rr.rgb;
}

}  // namespace evrf
