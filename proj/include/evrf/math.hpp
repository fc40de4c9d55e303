#pragma once

// Scalar and small fixed-size vector math used throughout the library.
// Everything numeric is templated on a scalar type S, which is either
// plain double or Dual (a forward-mode tangent pair). Running a whole
// pipeline with S = Dual yields the exact derivative with respect to
// whichever input carries a unit tangent.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>

namespace evrf {

// ---------------------------------------------------------------------------
// Dual number: value + single tangent component.
// ---------------------------------------------------------------------------
struct Dual {
  double v{0.0};
  double d{0.0};

  Dual() = default;
  Dual(double value) : v(value), d(0.0) {}
  Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
inline Dual operator/(Dual a, Dual b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
}
inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }
inline Dual& operator/=(Dual& a, Dual b) { a = a / b; return a; }

inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }
inline bool operator<=(Dual a, Dual b) { return a.v <= b.v; }
inline bool operator>=(Dual a, Dual b) { return a.v >= b.v; }

inline Dual exp(Dual a) { const double e = std::exp(a.v); return {e, e * a.d}; }
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, s > 0.0 ? 0.5 * a.d / s : 0.0};
}
inline Dual sin(Dual a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual atan2(Dual y, Dual x) {
  const double den = x.v * x.v + y.v * y.v;
  return {std::atan2(y.v, x.v), (x.v * y.d - y.v * x.d) / den};
}
inline Dual acos(Dual a) {
  return {std::acos(a.v), -a.d / std::sqrt(1.0 - a.v * a.v)};
}
inline Dual fabs(Dual a) { return a.v >= 0.0 ? a : -a; }

// Pull plain-double overloads into scope so templated code can write
// unqualified exp/log/... for both scalar kinds.
using std::acos;
using std::atan2;
using std::cos;
using std::exp;
using std::fabs;
using std::log;
using std::sin;
using std::sqrt;

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

// The reverse-mode accumulation rule: when backprop itself runs in Dual
// arithmetic (reverse-over-forward), a parameter's total derivative is the
// tangent part of its dual-valued adjoint; in plain double it is the
// adjoint itself. See render.hpp for how the output adjoint is seeded.
inline double grad_part(double x) { return x; }
inline double grad_part(Dual x) { return x.d; }

// Numerically stable softplus and its derivative (logistic sigmoid).
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline Dual softplus(Dual x) { return {softplus(x.v), sigmoid(x.v) * x.d}; }
inline Dual sigmoid(Dual x) {
  const double s = sigmoid(x.v);
  return {s, s * (1.0 - s) * x.d};
}

// ---------------------------------------------------------------------------
// Fixed-size vectors and quaternions over an arbitrary scalar.
// ---------------------------------------------------------------------------
template <class S>
struct Vec3 {
  S x{}, y{}, z{};

  Vec3() = default;
  Vec3(S a, S b, S c) : x(a), y(b), z(c) {}

  S& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const S& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

using Vec3d = Vec3<double>;

template <class S> Vec3<S> operator+(Vec3<S> a, Vec3<S> b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
template <class S> Vec3<S> operator-(Vec3<S> a, Vec3<S> b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
template <class S> Vec3<S> operator-(Vec3<S> a) { return {-a.x, -a.y, -a.z}; }
template <class S> Vec3<S> operator*(S s, Vec3<S> a) { return {s * a.x, s * a.y, s * a.z}; }
template <class S> Vec3<S> operator*(Vec3<S> a, S s) { return s * a; }
template <class S> Vec3<S>& operator+=(Vec3<S>& a, Vec3<S> b) { a = a + b; return a; }
template <class S> Vec3<S>& operator-=(Vec3<S>& a, Vec3<S> b) { a = a - b; return a; }

inline Vec3<Dual> operator*(double s, Vec3<Dual> a) { return Dual(s) * a; }
inline Vec3<Dual> lift(Vec3d a) { return {Dual(a.x), Dual(a.y), Dual(a.z)}; }
inline Vec3d lift_identity(Vec3d a) { return a; }

template <class S> S dot(Vec3<S> a, Vec3<S> b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
template <class S> Vec3<S> cross(Vec3<S> a, Vec3<S> b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
template <class S> S squared_norm(Vec3<S> a) { return dot(a, a); }
template <class S> S norm(Vec3<S> a) { return sqrt(dot(a, a)); }
template <class S> Vec3<S> normalized(Vec3<S> a) {
  const S inv = S(1.0) / norm(a);
  return inv * a;
}

template <class S>
Vec3d value_of(Vec3<S> a) { return {value_of(a.x), value_of(a.y), value_of(a.z)}; }

// Unit quaternion, (w, x, y, z) with scalar part first.
template <class S>
struct Quat {
  S w{}, x{}, y{}, z{};

  Quat() : w(S(1.0)), x(S(0.0)), y(S(0.0)), z(S(0.0)) {}
  Quat(S qw, S qx, S qy, S qz) : w(qw), x(qx), y(qy), z(qz) {}

  Vec3<S> vec() const { return {x, y, z}; }
};

using Quatd = Quat<double>;

template <class S> Quat<S> operator*(Quat<S> a, Quat<S> b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}
template <class S> Quat<S> operator+(Quat<S> a, Quat<S> b) { return {a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z}; }
template <class S> Quat<S> operator*(S s, Quat<S> q) { return {s * q.w, s * q.x, s * q.y, s * q.z}; }
template <class S> Quat<S> conjugate(Quat<S> q) { return {q.w, -q.x, -q.y, -q.z}; }
template <class S> S quat_dot(Quat<S> a, Quat<S> b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }
template <class S> S quat_norm(Quat<S> q) { return sqrt(quat_dot(q, q)); }
template <class S> Quat<S> quat_normalized(Quat<S> q) {
  const S inv = S(1.0) / quat_norm(q);
  return inv * q;
}

inline Quat<Dual> lift(Quatd q) { return {Dual(q.w), Dual(q.x), Dual(q.y), Dual(q.z)}; }

template <class S>
Quatd value_of(Quat<S> q) { return {value_of(q.w), value_of(q.x), value_of(q.y), value_of(q.z)}; }

// Rotate a vector by a unit quaternion: v' = v + 2 q_v x (q_v x v + w v).
template <class S>
Vec3<S> rotate(Quat<S> q, Vec3<S> v) {
  const Vec3<S> qv = q.vec();
  const Vec3<S> t = S(2.0) * cross(qv, v);
  return v + q.w * t + cross(qv, t);
}

// Adjoint of rotate: accumulates d(loss)/d(q) and d(loss)/d(v) given the
// output adjoint. Uses scalar triple product identities on the expanded
// form v + 2w (q_v x v) + 2 q_v x (q_v x v); valid for unit q.
template <class S>
void rotate_backward(Quat<S> q, Vec3<S> v, Vec3<S> d_out, Quat<S>& d_q, Vec3<S>* d_v) {
  const Vec3<S> qv = q.vec();
  const Vec3<S> qxv = cross(qv, v);
  d_q.w += S(2.0) * dot(d_out, qxv);
  const Vec3<S> d_qv = S(2.0) * (q.w * cross(v, d_out) + cross(qxv, d_out) +
                                 cross(v, cross(d_out, qv)));
  d_q.x += d_qv.x;
  d_q.y += d_qv.y;
  d_q.z += d_qv.z;
  if (d_v) *d_v += rotate(conjugate(q), d_out);
}

// Axis-angle construction (axis need not be normalized).
inline Quatd quat_from_axis_angle(Vec3d axis, double angle) {
  const double n = norm(axis);
  if (n < 1e-300) return Quatd{};
  const double half = 0.5 * angle;
  const double s = std::sin(half) / n;
  return {std::cos(half), axis.x * s, axis.y * s, axis.z * s};
}

// Geodesic angle between two unit quaternions, in radians.
inline double quat_angle(Quatd a, Quatd b) {
  double d = std::fabs(quat_dot(a, b));
  if (d > 1.0) d = 1.0;
  return 2.0 * std::acos(d);
}

template <class S>
Quat<S> lift_quat(Quatd q) {
  if constexpr (std::is_same_v<S, double>) return q;
  else return lift(q);
}

// Shorter-arc spherical interpolation. u in [0, 1] may carry a tangent.
template <class S>
Quat<S> slerp(Quatd q0, Quatd q1, S u) {
  double c = quat_dot(q0, q1);
  if (c < 0.0) {  // interpolate the representative on the same hemisphere
    q1 = -1.0 * q1;
    c = -c;
  }
  if (c > 1.0 - 1e-12) {
    // Nearly parallel: normalized lerp, with the same endpoint behavior.
    Quat<S> r = (S(1.0) - u) * lift_quat<S>(q0) + u * lift_quat<S>(q1);
    return quat_normalized(r);
  }
  const double theta = std::acos(c);
  const S inv_sin = S(1.0) / S(std::sin(theta));
  const S a = sin((S(1.0) - u) * S(theta)) * inv_sin;
  const S b = sin(u * S(theta)) * inv_sin;
  return a * lift_quat<S>(q0) + b * lift_quat<S>(q1);
}

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace evrf
