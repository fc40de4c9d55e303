#pragma once

// Continuous-time SE(3) camera trajectories: LERP/SLERP interpolation,
// synthetic orbit generation with uniform or oscillating speed, pose-noise
// injection, Sim(3) alignment, and the plain-text pose file format
// (`t tx ty tz qw qx qy qz`, one pose per line, strictly increasing t).

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "evrf/math.hpp"

namespace evrf {

struct Pose {
  Quatd rotation;      // camera-to-world
  Vec3d translation;   // camera center in world coordinates
  double timestamp{0.0};
};

template <class S>
struct PoseT {
  Quat<S> rotation;
  Vec3<S> translation;
};

using PoseD = PoseT<double>;

class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<Pose> poses) : poses_(std::move(poses)) {
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      if (!std::isfinite(poses_[i].timestamp) || poses_[i].timestamp < 0.0)
        throw std::invalid_argument("trajectory: timestamps must be finite and non-negative");
      if (i > 0 && poses_[i].timestamp <= poses_[i - 1].timestamp)
        throw std::invalid_argument("trajectory: timestamps must be strictly increasing");
      poses_[i].rotation = quat_normalized(poses_[i].rotation);
    }
  }

  const std::vector<Pose>& poses() const { return poses_; }
  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  double t_begin() const { return poses_.front().timestamp; }
  double t_end() const { return poses_.back().timestamp; }

  // Bracketing segment index for time t: poses_[i].t <= t <= poses_[i+1].t.
  std::size_t segment_index(double t) const {
    if (poses_.size() < 2)
      throw std::logic_error("trajectory: interpolation needs at least 2 poses");
    if (t < t_begin() || t > t_end())
      throw std::out_of_range("trajectory: query time outside trajectory span");
    auto it = std::upper_bound(poses_.begin(), poses_.end(), t,
                               [](double v, const Pose& p) { return v < p.timestamp; });
    std::size_t hi = static_cast<std::size_t>(it - poses_.begin());
    if (hi == 0) hi = 1;
    if (hi == poses_.size()) hi = poses_.size() - 1;
    return hi - 1;
  }

  // LERP translation / shorter-arc SLERP rotation at time t. The scalar may
  // carry a tangent, in which case the pose carries d(pose)/dt.
  template <class S>
  PoseT<S> sample(S t) const {
    const std::size_t i = segment_index(value_of(t));
    const Pose& a = poses_[i];
    const Pose& b = poses_[i + 1];
    const double span = b.timestamp - a.timestamp;
    const S u = (t - S(a.timestamp)) * S(1.0 / span);
    PoseT<S> out;
    out.rotation = quat_normalized(slerp<S>(a.rotation, b.rotation, u));
    out.translation = (S(1.0) - u) * lift_vec<S>(a.translation) + u * lift_vec<S>(b.translation);
    return out;
  }

  Pose interpolate(double t) const {
    const PoseD p = sample<double>(t);
    return {p.rotation, p.translation, t};
  }

 private:
  template <class S>
  static Vec3<S> lift_vec(Vec3d v) {
    if constexpr (std::is_same_v<S, double>) return v;
    else return lift(v);
  }

  std::vector<Pose> poses_;
};

// ---------------------------------------------------------------------------
// Orbit generation.
// ---------------------------------------------------------------------------
struct SpeedProfile {
  enum class Kind { kUniform, kOscillating };
  Kind kind{Kind::kUniform};
  double base_speed{1.0};   // scene units / s (scales the orbit angular rate)
  double frequency_hz{1.0};
  double span{8.0};         // speed oscillates between 1/span and span

  // Instantaneous speed multiplier.
  double multiplier(double t) const {
    if (kind == Kind::kUniform) return 1.0;
    return std::pow(span, std::sin(2.0 * M_PI * frequency_hz * t));
  }
};

inline void validate(const SpeedProfile& p) {
  if (p.span < 1.0) throw std::invalid_argument("speed profile: span must be >= 1");
  if (p.kind == SpeedProfile::Kind::kOscillating && p.frequency_hz <= 0.0)
    throw std::invalid_argument("speed profile: oscillation frequency must be > 0");
}

// Camera-to-world rotation for a camera at `eye` looking at `target`,
// +z camera axis pointing at the target (pinhole convention of scene.hpp).
inline Quatd look_at_rotation(Vec3d eye, Vec3d target, Vec3d up = {0.0, 0.0, 1.0}) {
  const Vec3d fwd = normalized(target - eye);
  Vec3d right = cross(fwd, up);
  if (norm(right) < 1e-12) right = cross(fwd, Vec3d{0.0, 1.0, 0.0});
  right = normalized(right);
  const Vec3d down = cross(fwd, right);  // camera +y
  // Columns of R are the camera axes expressed in world coordinates.
  const double m[3][3] = {{right.x, down.x, fwd.x},
                          {right.y, down.y, fwd.y},
                          {right.z, down.z, fwd.z}};
  const double tr = m[0][0] + m[1][1] + m[2][2];
  Quatd q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q = {0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s};
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    double s = std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
    q = {(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s};
  } else if (m[1][1] > m[2][2]) {
    double s = std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
    q = {(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s};
  } else {
    double s = std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
    q = {(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s};
  }
  return quat_normalized(q);
}

// 360-degree orbit in the z = height plane around the origin, camera looking
// at the origin. Azimuth advances in proportion to the instantaneous speed
// multiplier and is rescaled so the total sweep is exactly 2*pi.
inline Trajectory generate_orbit(const SpeedProfile& profile, double radius,
                                 double duration, double rate_hz,
                                 double height = 0.0) {
  validate(profile);
  if (radius <= 0.0 || duration <= 0.0 || rate_hz <= 0.0)
    throw std::invalid_argument("generate_orbit: radius, duration, rate must be > 0");

  const std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(duration * rate_hz)));
  // Cumulative azimuth by trapezoidal integration of the speed multiplier on
  // a fine grid, then normalized to 2*pi.
  const std::size_t grid = std::max<std::size_t>(4 * n, 4096);
  std::vector<double> cum(grid + 1, 0.0);
  const double h = duration / static_cast<double>(grid);
  for (std::size_t i = 1; i <= grid; ++i) {
    const double t0 = static_cast<double>(i - 1) * h;
    const double t1 = static_cast<double>(i) * h;
    cum[i] = cum[i - 1] + 0.5 * h * (profile.multiplier(t0) + profile.multiplier(t1));
  }
  const double scale = 2.0 * M_PI / cum[grid];

  std::vector<Pose> poses;
  poses.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = duration * static_cast<double>(k) / static_cast<double>(n - 1);
    const double pos = t / h;
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), grid - 1);
    const double frac = pos - static_cast<double>(lo);
    const double azimuth = scale * (cum[lo] + frac * (cum[lo + 1] - cum[lo]));
    const Vec3d eye{radius * std::cos(azimuth), radius * std::sin(azimuth), height};
    poses.push_back({look_at_rotation(eye, {0.0, 0.0, 0.0}), eye, t});
  }
  return Trajectory(std::move(poses));
}

// ---------------------------------------------------------------------------
// Noise injection (simulated pose-estimation error).
// ---------------------------------------------------------------------------
inline Trajectory perturb(const Trajectory& traj, double rot_sigma_deg,
                          double trans_sigma, std::uint64_t seed) {
  if (rot_sigma_deg < 0.0 || trans_sigma < 0.0)
    throw std::invalid_argument("perturb: sigmas must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Pose> out = traj.poses();
  for (Pose& p : out) {
    if (rot_sigma_deg > 0.0) {
      // Axis uniform on the sphere, angle |N(0, sigma)|.
      Vec3d axis{gauss(rng), gauss(rng), gauss(rng)};
      while (norm(axis) < 1e-9) axis = {gauss(rng), gauss(rng), gauss(rng)};
      const double angle = std::fabs(gauss(rng)) * rot_sigma_deg * M_PI / 180.0;
      p.rotation = quat_normalized(quat_from_axis_angle(axis, angle) * p.rotation);
    }
    if (trans_sigma > 0.0) {
      p.translation += Vec3d{gauss(rng) * trans_sigma, gauss(rng) * trans_sigma,
                             gauss(rng) * trans_sigma};
    }
  }
  return Trajectory(std::move(out));
}

// ---------------------------------------------------------------------------
// Sim(3) alignment (Umeyama closed form on the camera centers).
// ---------------------------------------------------------------------------
struct SimTransform {
  double scale{1.0};
  Quatd rotation;
  Vec3d translation;

  Vec3d apply(Vec3d p) const { return scale * rotate(rotation, p) + translation; }
};

namespace detail {
// Eigen-free 3x3 symmetric-ish SVD via Jacobi iteration on A^T A.
struct Mat3 {
  double m[3][3]{};
  static Mat3 identity() {
    Mat3 r; r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0; return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }
};
inline Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.m[i][k] * b.m[k][j];
      r.m[i][j] = s;
    }
  return r;
}
inline double det(const Mat3& a) {
  return a.m[0][0] * (a.m[1][1] * a.m[2][2] - a.m[1][2] * a.m[2][1]) -
         a.m[0][1] * (a.m[1][0] * a.m[2][2] - a.m[1][2] * a.m[2][0]) +
         a.m[0][2] * (a.m[1][0] * a.m[2][1] - a.m[1][1] * a.m[2][0]);
}

// Jacobi eigendecomposition of a symmetric 3x3 matrix: A = V diag(w) V^T.
inline void sym_eigen(Mat3 a, double w[3], Mat3& v) {
  v = Mat3::identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 3; ++p)
      for (int q = p + 1; q < 3; ++q) off += a.m[p][q] * a.m[p][q];
    if (off < 1e-26) break;
    for (int p = 0; p < 3; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::fabs(a.m[p][q]) < 1e-30) continue;
        const double theta = (a.m[q][q] - a.m[p][p]) / (2.0 * a.m[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a.m[k][p], akq = a.m[k][q];
          a.m[k][p] = c * akp - s * akq;
          a.m[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a.m[p][k], aqk = a.m[q][k];
          a.m[p][k] = c * apk - s * aqk;
          a.m[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v.m[k][p], vkq = v.m[k][q];
          v.m[k][p] = c * vkp - s * vkq;
          v.m[k][q] = s * vkp + c * vkq;
        }
      }
  }
  for (int i = 0; i < 3; ++i) w[i] = a.m[i][i];
}

inline Quatd quat_from_mat3(const Mat3& r) {
  const double tr = r.m[0][0] + r.m[1][1] + r.m[2][2];
  Quatd q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q = {0.25 * s, (r.m[2][1] - r.m[1][2]) / s, (r.m[0][2] - r.m[2][0]) / s,
         (r.m[1][0] - r.m[0][1]) / s};
  } else if (r.m[0][0] > r.m[1][1] && r.m[0][0] > r.m[2][2]) {
    double s = std::sqrt(1.0 + r.m[0][0] - r.m[1][1] - r.m[2][2]) * 2.0;
    q = {(r.m[2][1] - r.m[1][2]) / s, 0.25 * s, (r.m[0][1] + r.m[1][0]) / s,
         (r.m[0][2] + r.m[2][0]) / s};
  } else if (r.m[1][1] > r.m[2][2]) {
    double s = std::sqrt(1.0 + r.m[1][1] - r.m[0][0] - r.m[2][2]) * 2.0;
    q = {(r.m[0][2] - r.m[2][0]) / s, (r.m[0][1] + r.m[1][0]) / s, 0.25 * s,
         (r.m[1][2] + r.m[2][1]) / s};
  } else {
    double s = std::sqrt(1.0 + r.m[2][2] - r.m[0][0] - r.m[1][1]) * 2.0;
    q = {(r.m[1][0] - r.m[0][1]) / s, (r.m[0][2] + r.m[2][0]) / s,
         (r.m[1][2] + r.m[2][1]) / s, 0.25 * s};
  }
  return quat_normalized(q);
}
}  // namespace detail

// Least-squares similarity transform mapping `estimated` centers onto
// `reference` centers. Timestamps are matched by interpolating the reference
// at the estimated timestamps.
inline SimTransform align(const Trajectory& estimated, const Trajectory& reference) {
  if (estimated.size() < 3)
    throw std::invalid_argument("align: need at least 3 poses");
  std::vector<Vec3d> src, dst;
  for (const Pose& p : estimated.poses()) {
    double t = p.timestamp;
    if (t < reference.t_begin() || t > reference.t_end()) continue;
    src.push_back(p.translation);
    dst.push_back(reference.interpolate(t).translation);
  }
  const std::size_t n = src.size();
  if (n < 3) throw std::invalid_argument("align: fewer than 3 matched timestamps");

  Vec3d mean_src{}, mean_dst{};
  for (std::size_t i = 0; i < n; ++i) { mean_src += src[i]; mean_dst += dst[i]; }
  const double inv_n = 1.0 / static_cast<double>(n);
  mean_src = inv_n * mean_src;
  mean_dst = inv_n * mean_dst;

  detail::Mat3 cov{};  // dst-src cross-covariance
  double var_src = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3d a = src[i] - mean_src;
    const Vec3d b = dst[i] - mean_dst;
    var_src += squared_norm(a);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cov.m[r][c] += b[r] * a[c];
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cov.m[r][c] *= inv_n;
  var_src *= inv_n;
  if (var_src < 1e-18)
    throw std::runtime_error("align: degenerate (coincident) position set");

  // SVD of cov via eigendecomposition of cov^T cov.
  detail::Mat3 ata = cov.transposed() * cov;
  double w[3];
  detail::Mat3 v;
  detail::sym_eigen(ata, w, v);
  // Singular values and U = cov * V * diag(1/s).
  detail::Mat3 u{};
  double sv[3];
  for (int j = 0; j < 3; ++j) {
    sv[j] = std::sqrt(std::max(0.0, w[j]));
    detail::Mat3 av = cov * v;
    if (sv[j] > 1e-12) {
      for (int i = 0; i < 3; ++i) u.m[i][j] = av.m[i][j] / sv[j];
    }
  }
  // Rank-deficient covariance means collinear points.
  int rank = 0;
  double smax = std::max({sv[0], sv[1], sv[2]});
  for (int j = 0; j < 3; ++j)
    if (sv[j] > 1e-9 * std::max(smax, 1.0)) ++rank;
  if (rank < 2)
    throw std::runtime_error("align: degenerate (collinear) position set");
  if (rank == 2) {
    // Complete the missing left/right singular vectors by cross products.
    int j0 = 0, j1 = 1, jz = 2;
    if (sv[0] <= sv[1] && sv[0] <= sv[2]) { jz = 0; j0 = 1; j1 = 2; }
    else if (sv[1] <= sv[0] && sv[1] <= sv[2]) { jz = 1; j0 = 0; j1 = 2; }
    Vec3d u0{u.m[0][j0], u.m[1][j0], u.m[2][j0]};
    Vec3d u1{u.m[0][j1], u.m[1][j1], u.m[2][j1]};
    Vec3d u2 = normalized(cross(u0, u1));
    for (int i = 0; i < 3; ++i) u.m[i][jz] = u2[i];
    Vec3d v0{v.m[0][j0], v.m[1][j0], v.m[2][j0]};
    Vec3d v1{v.m[0][j1], v.m[1][j1], v.m[2][j1]};
    Vec3d v2 = normalized(cross(v0, v1));
    for (int i = 0; i < 3; ++i) v.m[i][jz] = v2[i];
  }
  // Reorder columns by decreasing singular value so that a determinant flip,
  // if needed, lands on the smallest one.
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int a, int b) { return sv[a] > sv[b]; });
  detail::Mat3 us{}, vs{};
  double svs[3];
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      us.m[i][j] = u.m[i][order[j]];
      vs.m[i][j] = v.m[i][order[j]];
    }
    svs[j] = sv[order[j]];
  }
  detail::Mat3 s3 = detail::Mat3::identity();
  if (detail::det(us) * detail::det(vs) < 0.0) s3.m[2][2] = -1.0;

  SimTransform tf;
  tf.rotation = detail::quat_from_mat3(us * s3 * vs.transposed());
  tf.scale = (svs[0] + svs[1] + s3.m[2][2] * svs[2]) / var_src;
  tf.translation = mean_dst - tf.scale * rotate(tf.rotation, mean_src);
  return tf;
}

inline Trajectory apply(const SimTransform& tf, const Trajectory& traj) {
  std::vector<Pose> out = traj.poses();
  for (Pose& p : out) {
    p.translation = tf.apply(p.translation);
    p.rotation = quat_normalized(tf.rotation * p.rotation);
  }
  return Trajectory(std::move(out));
}

// ---------------------------------------------------------------------------
// Pose file I/O.
// ---------------------------------------------------------------------------
inline void save_pose_file(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pose file: " + path);
  out.precision(17);
  for (const Pose& p : traj.poses()) {
    out << p.timestamp << ' ' << p.translation.x << ' ' << p.translation.y << ' '
        << p.translation.z << ' ' << p.rotation.w << ' ' << p.rotation.x << ' '
        << p.rotation.y << ' ' << p.rotation.z << '\n';
  }
}

inline Trajectory load_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read pose file: " + path);
  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Pose p;
    if (!(ss >> p.timestamp >> p.translation.x >> p.translation.y >> p.translation.z
             >> p.rotation.w >> p.rotation.x >> p.rotation.y >> p.rotation.z))
      throw std::runtime_error(path + ": malformed pose at line " + std::to_string(lineno));
    poses.push_back(p);
  }
  return Trajectory(std::move(poses));
}

}  // namespace evrf
