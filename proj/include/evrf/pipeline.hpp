#pragma once

// Artifact plumbing shared by the CLI and the acceptance suite: experiment
// manifests, parameter checkpoints, and whole-view rendering.
//
// Checkpoint layout (little-endian): magic "EVCK", u32 version, u32 JSON
// length, the JSON metadata block (architecture, camera, thresholds, color
// correction), u64 parameter count, then the flat f64 parameter array in
// block order vanilla(trunk, sigma, color), proposal(trunk, sigma),
// pose(embed_pose, embed_time, trunk).

#include <filesystem>
#include <fstream>

#include "evrf/metrics.hpp"
#include "evrf/trainer.hpp"

namespace evrf {

inline nlohmann::json camera_to_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx},
          {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Manifest: file paths tying one experiment together.
// ---------------------------------------------------------------------------
struct Manifest {
  std::string scene;        // analytic scene JSON
  std::string events;       // binary event file
  std::string prior_poses;  // noisy pose file fed to training
  std::string gt_poses;     // ground-truth pose file for evaluation
  std::string config;       // train config JSON
  std::vector<double> eval_times;  // held-out view timestamps
  bool has_camera{false};   // optional explicit intrinsics
  Camera camera;
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  nlohmann::json j;
  in >> j;
  const auto root = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& key) {
    const std::string p = j.at(key).get<std::string>();
    const std::filesystem::path full =
        std::filesystem::path(p).is_absolute() ? std::filesystem::path(p)
                                               : root / p;
    if (!std::filesystem::exists(full))
      throw std::runtime_error("manifest: missing file for '" + key +
                               "': " + full.string());
    return full.string();
  };
  Manifest m;
  m.scene = resolve("scene");
  m.events = resolve("events");
  m.prior_poses = resolve("prior_poses");
  m.gt_poses = resolve("gt_poses");
  m.config = resolve("config");
  if (j.contains("eval_times"))
    m.eval_times = j.at("eval_times").get<std::vector<double>>();
  if (j.contains("camera")) {
    m.has_camera = true;
    m.camera = camera_from_json(j.at("camera"));
  }
  return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j{{"scene", m.scene},
                   {"events", m.events},
                   {"prior_poses", m.prior_poses},
                   {"gt_poses", m.gt_poses},
                   {"config", m.config},
                   {"eval_times", m.eval_times}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------
// Everything needed to render and correct poses, independent of training
// state.
struct Model {
  TrainConfig config;
  Camera camera;
  ContrastThresholds thresholds;
  int iteration{0};
  VanillaField vanilla;
  ProposalField proposal;
  PoseNet pose_net;
  bool has_affine{false};
  AffineCorrection affine;
};

namespace detail {

inline void append_params(std::vector<double>& out, const Mlp& m) {
  out.insert(out.end(), m.weights().begin(), m.weights().end());
}

inline void take_params(const std::vector<double>& in, std::size_t& off, Mlp& m) {
  if (off + m.param_count() > in.size())
    throw std::runtime_error("checkpoint: parameter array too short");
  std::copy(in.begin() + static_cast<std::ptrdiff_t>(off),
            in.begin() + static_cast<std::ptrdiff_t>(off + m.param_count()),
            m.weights().begin());
  off += m.param_count();
}

}  // namespace detail

inline std::vector<double> collect_params(const VanillaField& v,
                                          const ProposalField& p,
                                          const PoseNet& n) {
  std::vector<double> out;
  out.reserve(v.param_count() + p.param_count() + n.param_count());
  detail::append_params(out, v.trunk());
  detail::append_params(out, v.sigma_head());
  detail::append_params(out, v.color_head());
  detail::append_params(out, p.trunk());
  detail::append_params(out, p.sigma_head());
  detail::append_params(out, n.embed_pose());
  detail::append_params(out, n.embed_time());
  detail::append_params(out, n.trunk());
  return out;
}

inline void scatter_params(const std::vector<double>& in, VanillaField& v,
                           ProposalField& p, PoseNet& n) {
  std::size_t off = 0;
  detail::take_params(in, off, v.trunk());
  detail::take_params(in, off, v.sigma_head());
  detail::take_params(in, off, v.color_head());
  detail::take_params(in, off, p.trunk());
  detail::take_params(in, off, p.sigma_head());
  detail::take_params(in, off, n.embed_pose());
  detail::take_params(in, off, n.embed_time());
  detail::take_params(in, off, n.trunk());
  if (off != in.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
}

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Model& model) {
  nlohmann::json meta;
  meta["config"] = train_config_to_json(model.config);
  meta["camera"] = camera_to_json(model.camera);
  meta["thresholds"] = {{"c_pos", model.thresholds.c_pos},
                        {"c_neg", model.thresholds.c_neg},
                        {"learnable", model.thresholds.learnable}};
  meta["iteration"] = model.iteration;
  if (model.has_affine)
    meta["color_correction"] = {
        {"r", {model.affine.r.gain, model.affine.r.offset}},
        {"g", {model.affine.g.gain, model.affine.g.offset}},
        {"b", {model.affine.b.gain, model.affine.b.offset}}};
  const std::string js = meta.dump();
  const std::vector<double> params =
      collect_params(model.vanilla, model.proposal, model.pose_net);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("EVCK", 4);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint32_t jlen = static_cast<std::uint32_t>(js.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&jlen), sizeof(jlen));
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  const std::uint64_t count = params.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
}

inline Model model_from_trainer(Trainer& tr, const AffineCorrection* affine) {
  Model m;
  m.config = tr.config();
  m.camera = tr.camera();
  m.thresholds = tr.thresholds();
  m.iteration = tr.iteration();
  m.vanilla = tr.vanilla();
  m.proposal = tr.proposal();
  m.pose_net = tr.pose_net();
  if (affine) {
    m.has_affine = true;
    m.affine = *affine;
  }
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EVCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0, jlen = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
  if (!in || version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  std::string js(jlen, '\0');
  in.read(js.data(), jlen);
  const nlohmann::json meta = nlohmann::json::parse(js);

  Model m;
  m.config = train_config_from_json(meta.at("config"));
  m.camera = camera_from_json(meta.at("camera"));
  m.thresholds.c_pos = meta.at("thresholds").at("c_pos").get<double>();
  m.thresholds.c_neg = meta.at("thresholds").at("c_neg").get<double>();
  m.thresholds.learnable = meta.at("thresholds").value("learnable", false);
  m.iteration = meta.value("iteration", 0);
  if (meta.contains("color_correction")) {
    m.has_affine = true;
    const auto& cc = meta.at("color_correction");
    auto chan = [&](const char* k) {
      AffineChannel c;
      c.gain = cc.at(k).at(0).get<double>();
      c.offset = cc.at(k).at(1).get<double>();
      return c;
    };
    m.affine.r = chan("r");
    m.affine.g = chan("g");
    m.affine.b = chan("b");
  }

  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<double> params(count);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated parameters in " + path);

  m.vanilla = VanillaField(m.config.field);
  m.proposal = ProposalField(m.config.field);
  m.pose_net = PoseNet(m.config.pose_net);
  scatter_params(params, m.vanilla, m.proposal, m.pose_net);
  return m;
}

// ---------------------------------------------------------------------------
// Whole-view rendering.
// ---------------------------------------------------------------------------
struct ViewRender {
  Image rgb;       // composited linear RGB
  Image log_mono;  // per-pixel rendered log-luminance (1 channel)
  Image depth;     // expected ray distance (1 channel)
};

inline ViewRender render_view(const VanillaField& vanilla,
                              const ProposalField& proposal, const Camera& cam,
                              const Pose& pose, const RayBounds& bounds,
                              int n_prop, int n_stages, WarpMode mode,
                              std::uint64_t seed, int threads = 1) {
  ViewRender out;
  out.rgb = Image(cam.width, cam.height, 3);
  out.log_mono = Image(cam.width, cam.height, 1);
  out.depth = Image(cam.width, cam.height, 1);

  auto run_rows = [&](int y0, int y1) {
    RayRender<double> rr;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec3d dir =
            normalized(rotate(pose.rotation, cam.pixel_direction(x, y)));
        const TwoPhaseSamples s =
            two_phase_sample(proposal, pose.translation, dir, bounds, n_prop,
                             n_stages, mode, mix_seed(seed, y * cam.width + x));
        render_ray(vanilla, pose.translation, dir, s.vanilla_t, bounds.t_far,
                   mode, rr);
        out.rgb.set_rgb(x, y, rr.rgb);
        out.log_mono.at(x, y, 0) = rr.log_mono;
        out.depth.at(x, y, 0) = render_depth(rr.weights, rr.t);
      }
  };
  const int n_threads = std::max(1, std::min(threads, cam.height));
  if (n_threads == 1) {
    run_rows(0, cam.height);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (cam.height + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back(run_rows, std::min(w * chunk, cam.height),
                        std::min((w + 1) * chunk, cam.height));
    for (auto& t : pool) t.join();
  }
  return out;
}

// Per-channel affine fit of the rendered log-luminance against reference
// RGB images, pooled over all pixels of all views.
inline AffineCorrection fit_view_affine(const std::vector<ViewRender>& views,
                                        const std::vector<Image>& refs) {
  if (views.empty() || views.size() != refs.size())
    throw std::invalid_argument("fit_view_affine: view/reference count mismatch");
  std::vector<double> log_l;
  std::vector<Vec3d> rgb;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Image& lm = views[v].log_mono;
    const Image& ref = refs[v];
    if (ref.width != lm.width || ref.height != lm.height || ref.channels != 3)
      throw std::invalid_argument("fit_view_affine: reference dimensions differ");
    for (int y = 0; y < lm.height; ++y)
      for (int x = 0; x < lm.width; ++x) {
        log_l.push_back(lm.at(x, y, 0));
        rgb.push_back({ref.at(x, y, 0), ref.at(x, y, 1), ref.at(x, y, 2)});
      }
  }
  return fit_affine_rgb(log_l, rgb);
}

inline Image corrected_rgb(const ViewRender& view, const AffineCorrection* affine) {
  if (!affine) return view.rgb;
  Image out(view.rgb.width, view.rgb.height, 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.set_rgb(x, y, affine->apply(view.log_mono.at(x, y, 0)));
  return out;
}

// Exact reference view from the analytic scene (for color fitting and
// metrics).
inline Image reference_view(const AnalyticScene& scene, const Camera& cam,
                            const Pose& pose) {
  Image out(cam.width, cam.height, 3);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3d dir =
          normalized(rotate(pose.rotation, cam.pixel_direction(x, y)));
      out.set_rgb(x, y, render_exact(scene, pose.translation, dir));
    }
  return out;
}

}  // namespace evrf
