// evrf command-line surface: event simulation, pose perturbation, training,
// rendering, pose correction, metric evaluation, gradient checking, and ray
// inspection. Every command exits 0 on success and nonzero with a message on
// stderr otherwise.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "evrf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace evrf;

namespace {

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  nlohmann::json j;
  in >> j;
  TrainConfig c = train_config_from_json(j);
  c.validate();
  return c;
}

Camera camera_for(const Manifest& m, const EventStream& stream) {
  if (m.has_camera) {
    if (m.camera.width != stream.width || m.camera.height != stream.height)
      throw std::runtime_error("manifest camera resolution differs from event stream");
    return m.camera;
  }
  Camera cam;
  cam.width = stream.width;
  cam.height = stream.height;
  cam.fx = cam.fy = stream.width;  // ~53-degree default optics
  cam.cx = 0.5 * stream.width;
  cam.cy = 0.5 * stream.height;
  return cam;
}

std::vector<std::string> sorted_files(const std::string& dir,
                                      const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_simulate(const std::string& scene_path, const std::string& poses_path,
                 const std::string& out_path, const Camera& cam, double c_pos,
                 double c_neg, double refractory, double dt) {
  const AnalyticScene scene = load_scene(scene_path);
  const Trajectory traj = load_pose_file(poses_path);
  const EventStream stream =
      simulate(scene, cam, traj, {c_pos, c_neg, false}, refractory, dt);
  save_events(stream, out_path);
  std::cout << "wrote " << stream.events.size() << " events to " << out_path
            << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& ckpt_path,
              const std::string& csv_path, int iterations_override,
              int threads_override, int checkpoint_every, bool fit_color) {
  const Manifest m = load_manifest(manifest_path);
  TrainConfig cfg = load_config(m.config);
  if (iterations_override > 0) cfg.iterations = iterations_override;
  if (threads_override > 0) cfg.threads = threads_override;

  const EventStream stream = load_events(m.events);
  const Trajectory prior = load_pose_file(m.prior_poses);
  const Camera cam = camera_for(m, stream);

  Trainer tr(cfg, stream, prior, cam);
  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw std::runtime_error("cannot write loss CSV: " + csv_path);
    csv << "iteration,total,reconstruction,gradient,proposal,distortion,lr,"
           "batch_size\n";
  }
  for (int i = 0; i < cfg.iterations; ++i) {
    const StepStats s = tr.train_step();
    if (csv)
      csv << i << ',' << s.total << ',' << s.mean.reconstruction << ','
          << s.mean.gradient << ',' << s.mean.proposal << ','
          << s.mean.distortion << ',' << s.lr << ',' << s.batch_size << '\n';
    if (checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 &&
        i + 1 < cfg.iterations)
      save_checkpoint(ckpt_path, model_from_trainer(tr, nullptr));
  }

  AffineCorrection affine;
  bool has_affine = false;
  if (fit_color && !m.eval_times.empty()) {
    // Fit the per-channel affine color correction against exact reference
    // views at the held-out times.
    const AnalyticScene scene = load_scene(m.scene);
    const Trajectory gt = load_pose_file(m.gt_poses);
    std::vector<ViewRender> views;
    std::vector<Image> refs;
    for (double t : m.eval_times) {
      const Pose pose = gt.interpolate(t);
      views.push_back(render_view(tr.vanilla(), tr.proposal(), cam, pose,
                                  cfg.bounds, cfg.n_prop, cfg.n_stages,
                                  cfg.warp, cfg.seed ^ 0x5eedULL, cfg.threads));
      refs.push_back(reference_view(scene, cam, pose));
    }
    affine = fit_view_affine(views, refs);
    has_affine = true;
  }
  save_checkpoint(ckpt_path, model_from_trainer(tr, has_affine ? &affine : nullptr));
  std::cout << "trained " << cfg.iterations << " iterations; checkpoint at "
            << ckpt_path << "\n";
  return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& poses_path,
               const std::string& out_dir, const std::string& reference_scene,
               bool raw, bool png, bool depth, int threads,
               std::uint64_t seed) {
  const Model model = load_checkpoint(ckpt_path);
  const Trajectory traj = load_pose_file(poses_path);
  fs::create_directories(out_dir);
  int idx = 0;
  if (!reference_scene.empty()) {
    // Exact scene renders at the same poses and intrinsics, for metrics.
    const AnalyticScene scene = load_scene(reference_scene);
    for (const Pose& pose : traj.poses()) {
      const Image rgb = reference_view(scene, model.camera, pose);
      char name[64];
      std::snprintf(name, sizeof(name), "view_%04d", idx);
      const std::string base = (fs::path(out_dir) / name).string();
      if (raw) save_raw(base + ".raw", rgb);
      if (png) save_png(base + ".png", rgb);
      ++idx;
    }
    std::cout << "rendered " << idx << " reference views into " << out_dir << "\n";
    return 0;
  }
  for (const Pose& pose : traj.poses()) {
    const ViewRender view = render_view(
        model.vanilla, model.proposal, model.camera, pose, model.config.bounds,
        model.config.n_prop, model.config.n_stages, model.config.warp,
        mix_seed(seed, idx), threads);
    const Image rgb =
        corrected_rgb(view, model.has_affine ? &model.affine : nullptr);
    char name[64];
    std::snprintf(name, sizeof(name), "view_%04d", idx);
    const std::string base = (fs::path(out_dir) / name).string();
    if (raw) save_raw(base + ".raw", rgb);
    if (png) save_png(base + ".png", rgb);
    if (depth) {
      // Normalize depth into [0,1] over the ray bounds for viewing.
      Image d = view.depth;
      const double span = model.config.bounds.t_far - model.config.bounds.t_near;
      for (double& v : d.data) v = (v - model.config.bounds.t_near) / span;
      save_png(base + "_depth.png", d);
    }
    ++idx;
  }
  std::cout << "rendered " << idx << " views into " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& render_dir, const std::string& ref_dir,
             const std::string& est_poses, const std::string& gt_poses,
             const std::string& out_path) {
  nlohmann::json j;
  if (!render_dir.empty() || !ref_dir.empty()) {
    const auto rendered = sorted_files(render_dir, ".raw");
    const auto refs = sorted_files(ref_dir, ".raw");
    if (rendered.size() != refs.size() || rendered.empty())
      throw std::runtime_error(
          "eval: image count mismatch (" + std::to_string(rendered.size()) +
          " rendered vs " + std::to_string(refs.size()) + " reference)");
    double mean_psnr = 0.0, mean_ssim = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      const Image a = load_raw(rendered[i]);
      const Image b = load_raw(refs[i]);
      mean_psnr += psnr(a, b);
      mean_ssim += ssim(a, b);
    }
    j["psnr"] = mean_psnr / static_cast<double>(rendered.size());
    j["ssim"] = mean_ssim / static_cast<double>(rendered.size());
  }
  if (!est_poses.empty() || !gt_poses.empty()) {
    const TrajectoryError e =
        traj_error(load_pose_file(est_poses), load_pose_file(gt_poses));
    j["re_deg"] = e.re_deg;
    j["te_units"] = e.te_units;
  }
  if (j.empty())
    throw std::runtime_error("eval: nothing to evaluate (no images, no poses)");
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write metrics: " + out_path);
    out << text;
    std::cout << text;
  }
  return 0;
}

int cmd_gradcheck(const std::string& manifest_path, int probes, double h) {
  const Manifest m = load_manifest(manifest_path);
  TrainConfig cfg = load_config(m.config);
  const EventStream stream = load_events(m.events);
  const Trajectory prior = load_pose_file(m.prior_poses);
  Trainer tr(cfg, stream, prior, camera_for(m, stream));
  const GradCheckReport report = tr.grad_check(probes, h);
  bool ok = true;
  for (std::size_t i = 0; i < report.blocks.size(); ++i) {
    std::printf("%-18s max relative error %.3e\n", report.blocks[i].c_str(),
                report.max_rel_error[i]);
    ok = ok && report.max_rel_error[i] < 1e-3;
  }
  return ok ? 0 : 1;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& poses_path,
                double time, int px, int py, double tau,
                const std::string& out_path) {
  const Model model = load_checkpoint(ckpt_path);
  const Trajectory traj = load_pose_file(poses_path);
  const Pose pose = traj.interpolate(time);
  const Vec3d dir = normalized(
      rotate(pose.rotation, model.camera.pixel_direction(px, py)));
  const RayBounds& b = model.config.bounds;
  const TwoPhaseSamples s =
      two_phase_sample(model.proposal, pose.translation, dir, b,
                       model.config.n_prop, model.config.n_stages,
                       model.config.warp, 0);
  RayRender<double> rr;
  render_ray(model.vanilla, pose.translation, dir, s.vanilla_t, b.t_far,
             model.config.warp, rr);
  std::vector<double> sigma(rr.evals.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = rr.evals[i].sigma;
  const double dt = (b.t_far - b.t_near) / static_cast<double>(sigma.size());
  const DiagnosticPdf field = diagnostic_pdf(sigma, dt, DiagnosticMode::kField, tau);
  const DiagnosticPdf bin = diagnostic_pdf(sigma, dt, DiagnosticMode::kBinarized, tau);

  std::ostream* os = &std::cout;
  std::ofstream f;
  if (!out_path.empty()) {
    f.open(out_path);
    if (!f) throw std::runtime_error("cannot write CSV: " + out_path);
    os = &f;
  }
  *os << "t,sigma,weight,transmittance,pdf_field,pdf_binarized\n";
  for (std::size_t i = 0; i < sigma.size(); ++i)
    *os << rr.t[i] << ',' << sigma[i] << ',' << rr.weights[i] << ','
        << rr.trans[i] << ',' << field.pdf[i] << ',' << bin.pdf[i] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-camera radiance-field reconstruction"};
  app.require_subcommand(1);

  // simulate
  std::string scene_path, poses_path, out_path;
  Camera cam;
  double c_pos = 0.25, c_neg = 0.25, refractory = 0.0, dt = 1e-3;
  auto* sim = app.add_subcommand("simulate", "scene + trajectory -> event file");
  sim->add_option("--scene", scene_path, "scene JSON")->required();
  sim->add_option("--poses", poses_path, "ground-truth pose file")->required();
  sim->add_option("--out", out_path, "output event file")->required();
  sim->add_option("--width", cam.width);
  sim->add_option("--height", cam.height);
  sim->add_option("--fx", cam.fx);
  sim->add_option("--fy", cam.fy);
  sim->add_option("--cx", cam.cx);
  sim->add_option("--cy", cam.cy);
  sim->add_option("--c-pos", c_pos, "positive contrast threshold");
  sim->add_option("--c-neg", c_neg, "negative contrast threshold");
  sim->add_option("--refractory", refractory);
  sim->add_option("--dt", dt, "simulation grid step");

  // perturb-poses
  std::string in_poses, out_poses;
  double rot_deg = 2.0, trans_sigma = 0.01;
  std::uint64_t seed = 1;
  auto* pp = app.add_subcommand("perturb-poses", "add pose-estimation noise");
  pp->add_option("--input", in_poses)->required();
  pp->add_option("--out", out_poses)->required();
  pp->add_option("--rot-deg", rot_deg, "rotation noise sigma, degrees");
  pp->add_option("--trans", trans_sigma, "translation noise sigma, scene units");
  pp->add_option("--seed", seed);

  // train
  std::string manifest_path, ckpt_path = "checkpoint.evck", csv_path;
  int iterations_override = 0, threads_override = 0, checkpoint_every = 0;
  bool fit_color = true;
  auto* train = app.add_subcommand("train", "manifest -> checkpoint + loss CSV");
  train->add_option("--manifest", manifest_path)->required();
  train->add_option("--checkpoint", ckpt_path, "output checkpoint path");
  train->add_option("--csv", csv_path, "loss curve CSV path");
  train->add_option("--iterations", iterations_override, "override config iterations");
  train->add_option("--threads", threads_override, "override config threads");
  train->add_option("--checkpoint-every", checkpoint_every, "intermediate saves");
  train->add_flag("!--no-color-fit", fit_color, "skip affine color fitting");

  // render
  std::string render_out = "renders";
  bool write_raw = true, write_png = true, write_depth = false;
  int render_threads = 1;
  std::uint64_t render_seed = 0;
  auto* render = app.add_subcommand("render", "checkpoint + poses -> images");
  render->add_option("--checkpoint", ckpt_path)->required();
  render->add_option("--poses", poses_path, "poses to render")->required();
  render->add_option("--out-dir", render_out);
  std::string reference_scene;
  render->add_option("--reference-scene", reference_scene,
                     "render exact analytic views of this scene instead of "
                     "the model (for metric references)");
  render->add_flag("!--no-raw", write_raw, "skip raw f32 output");
  render->add_flag("!--no-png", write_png, "skip PNG output");
  render->add_flag("--depth", write_depth, "also write normalized depth PNGs");
  render->add_option("--threads", render_threads);
  render->add_option("--seed", render_seed, "sampling seed");

  // correct-poses
  double pose_rate = 250.0;
  auto* cp = app.add_subcommand("correct-poses",
                                "checkpoint -> corrected pose file");
  cp->add_option("--checkpoint", ckpt_path)->required();
  cp->add_option("--prior", in_poses, "prior pose file fed to training")->required();
  cp->add_option("--out", out_poses)->required();
  cp->add_option("--rate", pose_rate, "output pose rate, Hz");

  // eval
  std::string render_dir, ref_dir, est_poses, gt_poses, metrics_out;
  auto* ev = app.add_subcommand("eval", "images / poses -> metrics JSON "
                                        "(PSNR, SSIM; LPIPS is out of scope: "
                                        "learned metric with external weights)");
  ev->add_option("--renders", render_dir, "directory of rendered .raw images");
  ev->add_option("--references", ref_dir, "directory of reference .raw images");
  ev->add_option("--est-poses", est_poses);
  ev->add_option("--gt-poses", gt_poses);
  ev->add_option("--out", metrics_out, "metrics JSON path (default stdout)");

  // gradcheck
  int probes = 8;
  double h = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->add_option("--manifest", manifest_path)->required();
  gc->add_option("--probes", probes, "probes per parameter block");
  gc->add_option("--step", h, "central-difference step");

  // inspect
  double inspect_time = 0.0, tau = 0.5;
  int px = 0, py = 0;
  auto* ins = app.add_subcommand("inspect", "per-ray sampling diagnostics CSV");
  ins->add_option("--checkpoint", ckpt_path)->required();
  ins->add_option("--poses", poses_path)->required();
  ins->add_option("--time", inspect_time)->required();
  ins->add_option("--px", px)->required();
  ins->add_option("--py", py)->required();
  ins->add_option("--tau", tau, "binarization threshold");
  ins->add_option("--out", out_path, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return cmd_simulate(scene_path, poses_path, out_path, cam, c_pos, c_neg,
                          refractory, dt);
    if (pp->parsed()) {
      save_pose_file(perturb(load_pose_file(in_poses), rot_deg, trans_sigma, seed),
                     out_poses);
      return 0;
    }
    if (train->parsed())
      return cmd_train(manifest_path, ckpt_path, csv_path, iterations_override,
                       threads_override, checkpoint_every, fit_color);
    if (render->parsed())
      return cmd_render(ckpt_path, poses_path, render_out, reference_scene,
                        write_raw, write_png, write_depth, render_threads,
                        render_seed);
    if (cp->parsed()) {
      const Model model = load_checkpoint(ckpt_path);
      const Trajectory prior = load_pose_file(in_poses);
      std::vector<double> times;
      for (double t = prior.t_begin(); t <= prior.t_end() + 1e-12;
           t += 1.0 / pose_rate)
        times.push_back(std::min(t, prior.t_end()));
      save_pose_file(correct_trajectory(model.pose_net, prior, times), out_poses);
      return 0;
    }
    if (ev->parsed())
      return cmd_eval(render_dir, ref_dir, est_poses, gt_poses, metrics_out);
    if (gc->parsed()) return cmd_gradcheck(manifest_path, probes, h);
    if (ins->parsed())
      return cmd_inspect(ckpt_path, poses_path, inspect_time, px, py, tau,
                         out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
