#pragma once

// Continuous pose-correction network psi: (t, prior trajectory) -> corrected
// SE(3) pose. The interpolated prior pose (7-vector, quaternion + translation)
// and the query time are embedded by two linear layers, summed, sinusoidally
// encoded, and pushed through a softplus MLP whose 7-dim output is a residual
// composed onto the prior (quaternion multiply, translation add, renormalize).
// With a zero output layer the correction is exactly the identity, so the
// network starts from the prior. Templated on the scalar so a Dual query
// time yields the exact d(pose)/dt that the gradient loss needs.

#include <vector>

#include "evrf/mlp.hpp"
#include "evrf/trajectory.hpp"

namespace evrf {

struct PoseNetConfig {
  int width{256};
  int n_hidden{4};
  int n_freq{2};  // sinusoidal levels applied to the summed embedding

  void validate() const {
    if (width < 1 || n_hidden < 1 || n_freq < 0)
      throw std::invalid_argument("pose net: bad architecture parameters");
  }
};

// Generic sinusoidal encoding of an arbitrary-length vector:
// [h, sin(2^l pi h), cos(2^l pi h)] for l = 0..L-1.
template <class S>
void encode_vector(const std::vector<S>& h, int n_freq, std::vector<S>& out) {
  const std::size_t n = h.size();
  out.resize(n * (1 + 2 * static_cast<std::size_t>(n_freq)));
  std::copy(h.begin(), h.end(), out.begin());
  std::size_t k = n;
  double scale = M_PI;
  for (int l = 0; l < n_freq; ++l) {
    for (std::size_t i = 0; i < n; ++i) out[k++] = sin(S(scale) * h[i]);
    for (std::size_t i = 0; i < n; ++i) out[k++] = cos(S(scale) * h[i]);
    scale *= 2.0;
  }
}

template <class S>
void encode_vector_backward(const std::vector<S>& h, int n_freq,
                            const std::vector<S>& d_out, std::vector<S>& d_h) {
  const std::size_t n = h.size();
  d_h.assign(n, S(0.0));
  for (std::size_t i = 0; i < n; ++i) d_h[i] = d_out[i];
  std::size_t k = n;
  double scale = M_PI;
  for (int l = 0; l < n_freq; ++l) {
    for (std::size_t i = 0; i < n; ++i)
      d_h[i] += S(scale) * cos(S(scale) * h[i]) * d_out[k++];
    for (std::size_t i = 0; i < n; ++i)
      d_h[i] -= S(scale) * sin(S(scale) * h[i]) * d_out[k++];
    scale *= 2.0;
  }
}

template <class S>
struct PoseNetEval {
  PoseT<S> prior;
  std::vector<S> prior7;          // [qw qx qy qz tx ty tz]
  MlpTape<S> pose_tape, time_tape, trunk_tape;
  std::vector<S> embed_pose, embed_time, h, enc, out7;
  Quat<S> residual, composed;     // residual quat and pre-normalization product
  PoseT<S> pose;                  // corrected pose, unit quaternion
};

struct PoseNetGrads {
  std::vector<double> embed_pose, embed_time, trunk;
};

class PoseNet {
 public:
  PoseNet() = default;
  explicit PoseNet(const PoseNetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    embed_pose_ = Mlp({7, cfg.width});
    embed_time_ = Mlp({1, cfg.width});
    std::vector<int> dims{cfg.width * (1 + 2 * cfg.n_freq)};
    for (int i = 0; i < cfg.n_hidden; ++i) dims.push_back(cfg.width);
    dims.push_back(7);
    trunk_ = Mlp(std::move(dims));
  }

  // Random init with a zeroed output layer: the initial correction is the
  // identity for every query time.
  void init(std::mt19937_64& rng) {
    embed_pose_.init(rng);
    embed_time_.init(rng);
    trunk_.init(rng);
    trunk_.zero_output_layer();
  }

  const PoseNetConfig& config() const { return cfg_; }
  Mlp& embed_pose() { return embed_pose_; }
  Mlp& embed_time() { return embed_time_; }
  Mlp& trunk() { return trunk_; }
  const Mlp& embed_pose() const { return embed_pose_; }
  const Mlp& embed_time() const { return embed_time_; }
  const Mlp& trunk() const { return trunk_; }

  std::size_t param_count() const {
    return embed_pose_.param_count() + embed_time_.param_count() + trunk_.param_count();
  }

  PoseNetGrads make_grads() const {
    return {std::vector<double>(embed_pose_.param_count(), 0.0),
            std::vector<double>(embed_time_.param_count(), 0.0),
            std::vector<double>(trunk_.param_count(), 0.0)};
  }

  // Offset of the trunk's output-layer block, for excluding it from weight
  // decay.
  std::size_t trunk_output_offset() const {
    std::size_t off = trunk_.param_count();
    const auto& dims = trunk_.dims();
    off -= static_cast<std::size_t>(dims[dims.size() - 2]) * dims.back() + dims.back();
    return off;
  }

  template <class S>
  PoseT<S> forward(S t, const Trajectory& prior, PoseNetEval<S>& ev) const {
    ev.prior = prior.sample(t);
    ev.prior7 = {ev.prior.rotation.w, ev.prior.rotation.x, ev.prior.rotation.y,
                 ev.prior.rotation.z, ev.prior.translation.x,
                 ev.prior.translation.y, ev.prior.translation.z};
    embed_pose_.forward(ev.prior7, ev.pose_tape, ev.embed_pose);
    const std::vector<S> tin{t};
    embed_time_.forward(tin, ev.time_tape, ev.embed_time);
    ev.h.resize(ev.embed_pose.size());
    for (std::size_t i = 0; i < ev.h.size(); ++i)
      ev.h[i] = ev.embed_pose[i] + ev.embed_time[i];
    encode_vector(ev.h, cfg_.n_freq, ev.enc);
    trunk_.forward(ev.enc, ev.trunk_tape, ev.out7);

    ev.residual = Quat<S>{S(1.0) + ev.out7[0], ev.out7[1], ev.out7[2], ev.out7[3]};
    ev.composed = ev.residual * ev.prior.rotation;
    ev.pose.rotation = quat_normalized(ev.composed);
    ev.pose.translation = ev.prior.translation +
                          Vec3<S>{ev.out7[4], ev.out7[5], ev.out7[6]};
    return ev.pose;
  }

  // Parameter gradients from adjoints on the corrected pose. The prior pose
  // is a fixed interpolation, so its adjoint is not propagated; time
  // derivatives go through the Dual forward instead.
  template <class S>
  void backward(const PoseNetEval<S>& ev, const Quat<S>& d_rotation,
                const Vec3<S>& d_translation, PoseNetGrads& grads) const {
    // Through quaternion renormalization: d_u = (d_q - q <d_q, q>) / ||u||.
    const S inv = S(1.0) / quat_norm(ev.composed);
    const S proj = quat_dot(d_rotation, ev.pose.rotation);
    Quat<S> d_u = inv * (d_rotation + (S(-1.0) * proj) * ev.pose.rotation);
    // Through the right product by the prior rotation.
    const Quat<S> d_res = d_u * conjugate(ev.prior.rotation);

    static thread_local std::vector<S> d_out7, d_enc, d_h;
    d_out7.assign(7, S(0.0));
    d_out7[0] = d_res.w;
    d_out7[1] = d_res.x;
    d_out7[2] = d_res.y;
    d_out7[3] = d_res.z;
    d_out7[4] = d_translation.x;
    d_out7[5] = d_translation.y;
    d_out7[6] = d_translation.z;

    trunk_.backward(ev.trunk_tape, d_out7, grads.trunk, &d_enc);
    encode_vector_backward(ev.h, cfg_.n_freq, d_enc, d_h);
    embed_pose_.backward(ev.pose_tape, d_h, grads.embed_pose,
                         static_cast<std::vector<S>*>(nullptr));
    embed_time_.backward(ev.time_tape, d_h, grads.embed_time,
                         static_cast<std::vector<S>*>(nullptr));
  }

 private:
  PoseNetConfig cfg_;
  Mlp embed_pose_, embed_time_, trunk_;
};

// Corrected trajectory export: evaluate psi on a time grid and rebuild a
// pose list in the trajectory format.
inline Trajectory correct_trajectory(const PoseNet& net, const Trajectory& prior,
                                     const std::vector<double>& times) {
  std::vector<Pose> poses;
  poses.reserve(times.size());
  PoseNetEval<double> ev;
  for (double t : times) {
    const PoseT<double> p = net.forward(t, prior, ev);
    poses.push_back({p.rotation, p.translation, t});
  }
  return Trajectory(poses);
}

}  // namespace evrf
