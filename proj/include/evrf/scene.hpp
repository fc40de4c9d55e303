#pragma once

// Analytic emissive-sphere scenes with closed-form volume rendering.
// Piecewise-constant density along any ray admits an exact transmittance
// integral, which gives exact log-radiance ground truth for event
// simulation and for checking the learned fields.

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evrf/math.hpp"
#include "evrf/trajectory.hpp"

namespace evrf {

struct SphereBlob {
  Vec3d center{};
  double radius{1.0};
  double density{1.0};          // sigma, per unit length
  Vec3d radiance{1.0, 1.0, 1.0};
};

struct AnalyticScene {
  std::vector<SphereBlob> primitives;
  Vec3d background{1.0, 1.0, 1.0};

  void validate() const {
    for (const auto& s : primitives) {
      if (s.radius <= 0.0) throw std::invalid_argument("scene: sphere radius must be > 0");
      if (!(s.density >= 0.0) || !std::isfinite(s.density))
        throw std::invalid_argument("scene: density must be finite and >= 0");
      for (int c = 0; c < 3; ++c)
        if (!(s.radiance[c] > 0.0)) throw std::invalid_argument("scene: radiance must be > 0");
    }
    for (int c = 0; c < 3; ++c)
      if (!(background[c] > 0.0)) throw std::invalid_argument("scene: background radiance must be > 0");
  }
};

struct Camera {
  double fx{64.0}, fy{64.0}, cx{32.0}, cy{32.0};
  int width{64}, height{64};

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("camera: fx, fy must be > 0");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
      throw std::invalid_argument("camera: principal point outside sensor");
  }

  // Camera-frame direction through the center of pixel (x, y); +z forward.
  template <class S = double>
  Vec3<S> pixel_direction(double x, double y) const {
    return {S((x + 0.5 - cx) / fx), S((y + 0.5 - cy) / fy), S(1.0)};
  }
};

constexpr double kLumaR = 0.2126, kLumaG = 0.7152, kLumaB = 0.0722;

inline double luminance(Vec3d rgb) {
  return kLumaR * rgb.x + kLumaG * rgb.y + kLumaB * rgb.z;
}

// Exact volume rendering of the sphere scene along one ray. Overlapping
// spheres contribute additive density and density-weighted emission; the
// residual transmittance is filled with the background radiance.
inline Vec3d render_exact(const AnalyticScene& scene, Vec3d origin, Vec3d dir) {
  if (std::fabs(squared_norm(dir) - 1.0) > 2e-9)
    throw std::invalid_argument("render_exact: direction must be unit-norm");

  struct Boundary { double t; int sphere; bool enter; };
  std::vector<Boundary> bounds;
  bounds.reserve(scene.primitives.size() * 2);
  for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
    const SphereBlob& s = scene.primitives[k];
    const Vec3d oc = origin - s.center;
    const double b = dot(oc, dir);
    const double c = squared_norm(oc) - s.radius * s.radius;
    const double disc = b * b - c;
    if (disc <= 0.0) continue;
    const double sq = std::sqrt(disc);
    const double t0 = std::max(0.0, -b - sq);
    const double t1 = -b + sq;
    if (t1 <= 0.0 || t1 <= t0) continue;
    bounds.push_back({t0, static_cast<int>(k), true});
    bounds.push_back({t1, static_cast<int>(k), false});
  }
  std::sort(bounds.begin(), bounds.end(),
            [](const Boundary& a, const Boundary& b) { return a.t < b.t; });

  Vec3d radiance{};
  double transmittance = 1.0;
  std::vector<char> inside(scene.primitives.size(), 0);
  double t_prev = bounds.empty() ? 0.0 : bounds.front().t;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const double t_next = bounds[i].t;
    if (t_next > t_prev) {
      double sigma = 0.0;
      Vec3d emission{};
      for (std::size_t k = 0; k < inside.size(); ++k) {
        if (!inside[k]) continue;
        sigma += scene.primitives[k].density;
        emission += scene.primitives[k].density * scene.primitives[k].radiance;
      }
      if (sigma > 0.0) {
        const double alpha = -std::expm1(-sigma * (t_next - t_prev));
        const double w = transmittance * alpha;
        radiance += (w / sigma) * emission;
        transmittance *= 1.0 - alpha;
      }
    }
    inside[bounds[i].sphere] = bounds[i].enter ? 1 : 0;
    t_prev = t_next;
  }
  radiance += transmittance * scene.background;
  return radiance;
}

// Piecewise-constant density and emission sampled at a point along a ray.
// Used by the quadrature oracle in tests.
inline void sample_media(const AnalyticScene& scene, Vec3d p, double* sigma_out,
                         Vec3d* emission_out) {
  double sigma = 0.0;
  Vec3d emission{};
  for (const SphereBlob& s : scene.primitives) {
    if (squared_norm(p - s.center) < s.radius * s.radius) {
      sigma += s.density;
      emission += s.density * s.radiance;
    }
  }
  *sigma_out = sigma;
  *emission_out = emission;
}

// Natural log of the mono (Rec. 709) radiance seen by a pixel at time t.
inline double pixel_log_radiance(const AnalyticScene& scene, const Camera& camera,
                                 const Trajectory& traj, int px, int py, double t) {
  if (px < 0 || px >= camera.width || py < 0 || py >= camera.height)
    throw std::out_of_range("pixel_log_radiance: pixel outside sensor");
  const Pose pose = traj.interpolate(t);
  const Vec3d dir = normalized(rotate(pose.rotation, camera.pixel_direction(px, py)));
  return std::log(luminance(render_exact(scene, pose.translation, dir)));
}

inline double pixel_log_radiance(const AnalyticScene& scene, const Camera& camera,
                                 const Pose& pose, int px, int py) {
  const Vec3d dir = normalized(rotate(pose.rotation, camera.pixel_direction(px, py)));
  return std::log(luminance(render_exact(scene, pose.translation, dir)));
}

// ---------------------------------------------------------------------------
// Scene JSON I/O. Schema:
//   { "background": [r, g, b],
//     "spheres": [ {"center": [x,y,z], "radius": r,
//                   "density": s, "radiance": [r,g,b]}, ... ] }
// ---------------------------------------------------------------------------
inline AnalyticScene scene_from_json(const nlohmann::json& j) {
  AnalyticScene scene;
  const auto& bg = j.at("background");
  scene.background = {bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>()};
  for (const auto& js : j.value("spheres", nlohmann::json::array())) {
    SphereBlob s;
    const auto& c = js.at("center");
    s.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    s.radius = js.at("radius").get<double>();
    s.density = js.at("density").get<double>();
    const auto& r = js.at("radiance");
    s.radiance = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    scene.primitives.push_back(s);
  }
  scene.validate();
  return scene;
}

inline nlohmann::json scene_to_json(const AnalyticScene& scene) {
  nlohmann::json j;
  j["background"] = {scene.background.x, scene.background.y, scene.background.z};
  j["spheres"] = nlohmann::json::array();
  for (const SphereBlob& s : scene.primitives) {
    j["spheres"].push_back({{"center", {s.center.x, s.center.y, s.center.z}},
                            {"radius", s.radius},
                            {"density", s.density},
                            {"radiance", {s.radiance.x, s.radiance.y, s.radiance.z}}});
  }
  return j;
}

inline AnalyticScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene file: " + path);
  nlohmann::json j;
  in >> j;
  return scene_from_json(j);
}

inline void save_scene(const AnalyticScene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file: " + path);
  out << scene_to_json(scene).dump(2) << '\n';
}

}  // namespace evrf
