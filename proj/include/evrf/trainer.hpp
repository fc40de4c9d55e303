#pragma once

// Joint training of the vanilla field, proposal field, pose-correction
// network, and (optionally) the contrast thresholds from an event stream.
//
// Stop-gradient contract: sample distances produced by resampling are
// constants, the vanilla histogram entering the proposal loss is detached,
// and the proposal-loss sample positions are frozen in world space. The
// gradient-check harness evaluates the same objective with the same frozen
// quantities, so finite differences and the hand-coded adjoints agree.

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "evrf/color.hpp"
#include "evrf/events.hpp"
#include "evrf/losses.hpp"
#include "evrf/pose_net.hpp"
#include "evrf/render.hpp"

namespace evrf {

struct TrainConfig {
  FieldConfig field;
  PoseNetConfig pose_net;
  LossWeights loss_weights;
  bool enable_reconstruction{true};
  bool enable_gradient{true};
  bool enable_proposal{true};
  bool enable_distortion{true};
  bool use_pose_net{true};
  bool learn_thresholds{true};
  WarpMode warp{WarpMode::kIdentity};
  RayBounds bounds{0.5, 10.0};
  int n_prop{32};
  int n_stages{2};
  double lr_main{0.01};
  double lr_pose{1e-4};
  // L2 pull of the pose-correction output layer toward zero (the identity
  // correction): keeps psi anchored to the prior in directions the events
  // constrain weakly.
  double pose_decay{1e-2};
  // Fraction of the run during which pose updates are held: early on a
  // barely-fitted field rewards pointing rays at empty space, so the
  // correction must wait until the geometry carries signal.
  double pose_warmup{0.1};
  double lr_threshold{0.05};
  double weight_decay{1e-6};
  double decay_factor{0.33};
  std::vector<double> milestones{0.5, 0.75, 0.9};
  int iterations{5000};
  int sample_budget{8192};
  int threads{1};
  std::uint64_t seed{1};

  void validate() const {
    loss_weights.validate();
    bounds.validate();
    if (lr_main < 0.0 || lr_pose < 0.0 || lr_threshold < 0.0 ||
        pose_decay < 0.0 || pose_warmup < 0.0 || pose_warmup >= 1.0)
      throw std::invalid_argument("train config: learning rates must be >= 0");
    for (double m : milestones)
      if (!(m > 0.0 && m < 1.0))
        throw std::invalid_argument("train config: milestones must lie in (0,1)");
    if (iterations < 1 || sample_budget < 1 || threads < 1)
      throw std::invalid_argument("train config: bad iteration/budget/thread count");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {
      {"field",
       {{"vanilla_depth", c.field.vanilla_depth},
        {"vanilla_width", c.field.vanilla_width},
        {"proposal_depth", c.field.proposal_depth},
        {"proposal_width", c.field.proposal_width},
        {"n_freq_position", c.field.encoding.n_freq_position},
        {"n_freq_direction", c.field.encoding.n_freq_direction},
        {"radiance_floor", c.field.radiance_floor}}},
      {"pose_net",
       {{"width", c.pose_net.width},
        {"n_hidden", c.pose_net.n_hidden},
        {"n_freq", c.pose_net.n_freq}}},
      {"loss_weights",
       {{"alpha", c.loss_weights.alpha},
        {"beta", c.loss_weights.beta},
        {"gamma", c.loss_weights.gamma},
        {"eta", c.loss_weights.eta}}},
      {"enable_reconstruction", c.enable_reconstruction},
      {"enable_gradient", c.enable_gradient},
      {"enable_proposal", c.enable_proposal},
      {"enable_distortion", c.enable_distortion},
      {"use_pose_net", c.use_pose_net},
      {"learn_thresholds", c.learn_thresholds},
      {"warp", c.warp == WarpMode::kIdentity ? "identity"
               : c.warp == WarpMode::kContract ? "contract" : "ndc"},
      {"t_near", c.bounds.t_near},
      {"t_far", c.bounds.t_far},
      {"n_prop", c.n_prop},
      {"n_stages", c.n_stages},
      {"lr_main", c.lr_main},
      {"lr_pose", c.lr_pose},
      {"pose_decay", c.pose_decay},
      {"pose_warmup", c.pose_warmup},
      {"lr_threshold", c.lr_threshold},
      {"weight_decay", c.weight_decay},
      {"decay_factor", c.decay_factor},
      {"milestones", c.milestones},
      {"iterations", c.iterations},
      {"sample_budget", c.sample_budget},
      {"threads", c.threads},
      {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("field")) {
    const auto& f = j.at("field");
    c.field.vanilla_depth = f.value("vanilla_depth", c.field.vanilla_depth);
    c.field.vanilla_width = f.value("vanilla_width", c.field.vanilla_width);
    c.field.proposal_depth = f.value("proposal_depth", c.field.proposal_depth);
    c.field.proposal_width = f.value("proposal_width", c.field.proposal_width);
    c.field.encoding.n_freq_position =
        f.value("n_freq_position", c.field.encoding.n_freq_position);
    c.field.encoding.n_freq_direction =
        f.value("n_freq_direction", c.field.encoding.n_freq_direction);
    c.field.radiance_floor = f.value("radiance_floor", c.field.radiance_floor);
  }
  if (j.contains("pose_net")) {
    const auto& p = j.at("pose_net");
    c.pose_net.width = p.value("width", c.pose_net.width);
    c.pose_net.n_hidden = p.value("n_hidden", c.pose_net.n_hidden);
    c.pose_net.n_freq = p.value("n_freq", c.pose_net.n_freq);
  }
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.alpha = w.value("alpha", c.loss_weights.alpha);
    c.loss_weights.beta = w.value("beta", c.loss_weights.beta);
    c.loss_weights.gamma = w.value("gamma", c.loss_weights.gamma);
    c.loss_weights.eta = w.value("eta", c.loss_weights.eta);
  }
  c.enable_reconstruction = j.value("enable_reconstruction", c.enable_reconstruction);
  c.enable_gradient = j.value("enable_gradient", c.enable_gradient);
  c.enable_proposal = j.value("enable_proposal", c.enable_proposal);
  c.enable_distortion = j.value("enable_distortion", c.enable_distortion);
  c.use_pose_net = j.value("use_pose_net", c.use_pose_net);
  c.learn_thresholds = j.value("learn_thresholds", c.learn_thresholds);
  if (j.contains("warp")) c.warp = warp_mode_from_string(j.at("warp").get<std::string>());
  c.bounds.t_near = j.value("t_near", c.bounds.t_near);
  c.bounds.t_far = j.value("t_far", c.bounds.t_far);
  c.n_prop = j.value("n_prop", c.n_prop);
  c.n_stages = j.value("n_stages", c.n_stages);
  c.lr_main = j.value("lr_main", c.lr_main);
  c.lr_pose = j.value("lr_pose", c.lr_pose);
  c.pose_decay = j.value("pose_decay", c.pose_decay);
  c.pose_warmup = j.value("pose_warmup", c.pose_warmup);
  c.lr_threshold = j.value("lr_threshold", c.lr_threshold);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  if (j.contains("milestones"))
    c.milestones = j.at("milestones").get<std::vector<double>>();
  c.iterations = j.value("iterations", c.iterations);
  c.sample_budget = j.value("sample_budget", c.sample_budget);
  c.threads = j.value("threads", c.threads);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Step decay: the decay factor applies cumulatively at each passed
// milestone, to the main and the threshold rates alike.
inline double schedule_scale(const TrainConfig& c, int iteration) {
  double s = 1.0;
  for (double m : c.milestones)
    if (static_cast<double>(iteration) >= m * c.iterations) s *= c.decay_factor;
  return s;
}

inline double schedule_lr(const TrainConfig& c, int iteration) {
  return c.lr_main * schedule_scale(c, iteration);
}

// Batch size from the sample budget and the running average of samples
// consumed per event ray.
inline int batch_size_for(int budget, double avg_samples_per_ray) {
  return std::max(1, static_cast<int>(std::llround(budget / avg_samples_per_ray)));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27; x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

struct EventSample {
  std::size_t index{0};
  double t_samp{0.0};
  std::uint64_t seed{0};
};

struct StepStats {
  LossTerms mean;      // batch-mean loss components
  double total{0.0};
  double lr{0.0};
  int batch_size{0};
  int degenerate_dropped{0};
};

struct GradCheckReport {
  std::vector<std::string> blocks;
  std::vector<double> max_rel_error;
  double worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
  }
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, EventStream stream, Trajectory prior, Camera camera)
      : cfg_(std::move(cfg)),
        stream_(std::move(stream)),
        prior_(std::move(prior)),
        camera_(camera),
        vanilla_(cfg_.field),
        proposal_(cfg_.field),
        pose_net_(cfg_.pose_net),
        rng_(cfg_.seed) {
    cfg_.validate();
    if (stream_.events.empty())
      throw std::runtime_error("trainer: empty event stream");
    std::mt19937_64 init_rng(mix_seed(cfg_.seed, 0xabcdef));
    vanilla_.init(init_rng);
    proposal_.init(init_rng);
    pose_net_.init(init_rng);
    // Thresholds live as softplus pre-activations so they stay positive.
    rho_ = {inverse_softplus(stream_.thresholds.c_pos),
            inverse_softplus(stream_.thresholds.c_neg)};
    // Initial estimate of samples consumed per event (three renders).
    avg_samples_ = initial_samples_per_event();
  }

  VanillaField& vanilla() { return vanilla_; }
  ProposalField& proposal() { return proposal_; }
  PoseNet& pose_net() { return pose_net_; }
  const TrainConfig& config() const { return cfg_; }
  const Trajectory& prior() const { return prior_; }
  const Camera& camera() const { return camera_; }
  int iteration() const { return iteration_; }
  double avg_samples_per_ray() const { return avg_samples_; }

  double threshold_pos() const { return softplus(rho_[0]); }
  double threshold_neg() const { return softplus(rho_[1]); }
  ContrastThresholds thresholds() const {
    return {threshold_pos(), threshold_neg(), cfg_.learn_thresholds};
  }

  // Corrected pose at time t (prior interpolation when psi is disabled).
  Pose corrected_pose(double t) const {
    PoseNetEval<double> ev;
    const PoseT<double> p = cfg_.use_pose_net ? pose_net_.forward(t, prior_, ev)
                                              : prior_.sample(t);
    return {p.rotation, p.translation, t};
  }

  std::vector<EventSample> sample_batch() {
    const int want = batch_size_for(cfg_.sample_budget, avg_samples_);
    std::uniform_int_distribution<std::size_t> pick(0, stream_.events.size() - 1);
    std::vector<EventSample> batch;
    batch.reserve(static_cast<std::size_t>(want));
    int guard = 0;
    while (static_cast<int>(batch.size()) < want && guard < 100 * want) {
      ++guard;
      const std::size_t idx = pick(rng_);
      const Event& e = stream_.events[idx];
      if (!(e.t_curr > e.t_prev)) continue;  // degenerate span, dropped
      std::uniform_real_distribution<double> ut(e.t_prev, e.t_curr);
      double ts = ut(rng_);
      if (ts <= e.t_prev || ts >= e.t_curr) ts = 0.5 * (e.t_prev + e.t_curr);
      batch.push_back({idx, ts, rng_()});
    }
    if (batch.empty()) throw std::runtime_error("trainer: no usable events in stream");
    return batch;
  }

  StepStats train_step() {
    const std::vector<EventSample> batch = sample_batch();
    const double scale = 1.0 / static_cast<double>(batch.size());

    GradSet total = make_grads();
    std::vector<LossTerms> terms(batch.size());
    const int n_threads =
        std::min<int>(cfg_.threads, static_cast<int>(batch.size()));
    if (n_threads <= 1) {
      EventWork work;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        prepare(batch[k], work);
        forward(work, terms[k]);
        backward(work, scale, total);
      }
    } else {
      std::vector<GradSet> partial;
      partial.reserve(static_cast<std::size_t>(n_threads));
      for (int w = 0; w < n_threads; ++w) partial.push_back(make_grads());
      // Static contiguous chunks and a fixed reduction order: the grad sums
      // depend only on the thread count, not on scheduling.
      std::vector<std::thread> pool;
      const std::size_t chunk = (batch.size() + n_threads - 1) / n_threads;
      for (int w = 0; w < n_threads; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        const std::size_t hi = std::min(batch.size(), lo + chunk);
        pool.emplace_back([&, lo, hi, w] {
          EventWork work;
          for (std::size_t k = lo; k < hi; ++k) {
            prepare(batch[k], work);
            forward(work, terms[k]);
            backward(work, scale, partial[static_cast<std::size_t>(w)]);
          }
        });
      }
      for (auto& t : pool) t.join();
      for (const GradSet& g : partial) add_grads(total, g);
    }

    check_finite(total);
    apply_update(total);

    StepStats stats;
    stats.batch_size = static_cast<int>(batch.size());
    stats.lr = schedule_lr(cfg_, iteration_);
    for (const LossTerms& t : terms) {
      stats.mean.reconstruction += t.reconstruction;
      stats.mean.gradient += t.gradient;
      stats.mean.proposal += t.proposal;
      stats.mean.distortion += t.distortion;
    }
    stats.mean.reconstruction *= scale;
    stats.mean.gradient *= scale;
    stats.mean.proposal *= scale;
    stats.mean.distortion *= scale;
    stats.total = total_loss(terms, effective_weights());
    ++iteration_;
    return stats;
  }

  // Finite-difference verification of the full graph on a small batch.
  // The report lists the max relative error per parameter block; corruption
  // (a test fixture) offsets the analytic gradients to prove the check can
  // fail.
  GradCheckReport grad_check(int probes_per_block, double h,
                             double corruption = 0.0) {
    const std::vector<EventSample> batch = sample_batch();
    const std::size_t n_ev = std::min<std::size_t>(batch.size(), 3);
    const double scale = 1.0 / static_cast<double>(n_ev);

    std::vector<EventWork> works(n_ev);
    GradSet analytic = make_grads();
    for (std::size_t k = 0; k < n_ev; ++k) {
      prepare(batch[k], works[k]);
      LossTerms t;
      forward(works[k], t);
      backward(works[k], scale, analytic);
    }
    auto objective = [&]() {
      std::vector<LossTerms> ts(n_ev);
      for (std::size_t k = 0; k < n_ev; ++k) forward(works[k], ts[k]);
      return total_loss(ts, effective_weights());
    };

    struct Block { const char* name; std::vector<double>* w; std::vector<double>* g; };
    std::vector<Block> blocks = {
        {"vanilla.trunk", &vanilla_.trunk().weights(), &analytic.vanilla.trunk},
        {"vanilla.sigma", &vanilla_.sigma_head().weights(), &analytic.vanilla.sigma},
        {"vanilla.color", &vanilla_.color_head().weights(), &analytic.vanilla.color},
        {"proposal.trunk", &proposal_.trunk().weights(), &analytic.proposal.trunk},
        {"proposal.sigma", &proposal_.sigma_head().weights(), &analytic.proposal.sigma},
    };
    if (cfg_.use_pose_net) {
      blocks.push_back({"pose.embed_pose", &pose_net_.embed_pose().weights(),
                        &analytic.pose.embed_pose});
      blocks.push_back({"pose.embed_time", &pose_net_.embed_time().weights(),
                        &analytic.pose.embed_time});
      blocks.push_back({"pose.trunk", &pose_net_.trunk().weights(),
                        &analytic.pose.trunk});
    }
    if (cfg_.learn_thresholds)
      blocks.push_back({"thresholds", &rho_, &analytic.rho});

    GradCheckReport report;
    std::mt19937_64 probe_rng(mix_seed(cfg_.seed, 0x6abc1e));
    for (const Block& b : blocks) {
      double worst = 0.0;
      std::uniform_int_distribution<std::size_t> idx(0, b.w->size() - 1);
      for (int p = 0; p < probes_per_block; ++p) {
        const std::size_t i = b.w->size() == 1 ? 0 : idx(probe_rng);
        const double keep = (*b.w)[i];
        (*b.w)[i] = keep + h;
        const double hi = objective();
        (*b.w)[i] = keep - h;
        const double lo = objective();
        (*b.w)[i] = keep;
        const double fd = (hi - lo) / (2.0 * h);
        const double an = (*b.g)[i] + corruption;
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-7});
        worst = std::max(worst, std::fabs(fd - an) / denom);
      }
      report.blocks.push_back(b.name);
      report.max_rel_error.push_back(worst);
    }
    return report;
  }

 private:
  struct GradSet {
    VanillaGrads vanilla;
    ProposalGrads proposal;
    PoseNetGrads pose;
    std::vector<double> rho;
  };

  // Per-event forward/backward workspace. prepare() freezes the sampled
  // distances and the detached quantities; forward()/backward() consume
  // them with the current parameters.
  struct EventWork {
    const Event* event{nullptr};
    double t_samp{0.0};
    int px{0}, py{0};
    // Frozen sampling.
    std::vector<double> vt_i, vt_j, vt_s;          // vanilla distances
    std::vector<WeightedIntervals> stage_hist;     // edges reused; weights rewritten
    std::vector<std::vector<double>> stage_delta;  // interval widths per stage
    std::vector<std::vector<Vec3d>> stage_xw;      // frozen warped positions
    WeightedIntervals frozen_hist;                 // detached vanilla histogram
    // Forward products.
    PoseNetEval<double> pe_i, pe_j;
    PoseNetEval<Dual> pe_s;
    PoseT<double> pose_i, pose_j;
    PoseT<Dual> pose_s;
    PixelRender<double> pr_i, pr_j;
    PixelRender<Dual> pr_s;
    std::vector<std::vector<ProposalEval<double>>> stage_evals;
    std::vector<std::vector<double>> stage_trans;
    WeightedIntervals hist_j;  // current vanilla histogram (l_d, l_p queries)
    double delta_hat{0.0}, target{0.0}, cbar{0.0};
    double g_pred{0.0}, g_gt{0.0};
    LossTerms terms;
  };

  static double inverse_softplus(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("thresholds must be > 0");
    return y > 30.0 ? y : std::log(std::expm1(y));
  }

  double initial_samples_per_event() const {
    return 3.0 * (static_cast<double>(cfg_.n_stages) * cfg_.n_prop +
                  (cfg_.n_prop + 1) / 2);
  }

  LossWeights effective_weights() const {
    LossWeights w = cfg_.loss_weights;
    if (!cfg_.enable_reconstruction) w.alpha = 0.0;
    if (!cfg_.enable_gradient) w.beta = 0.0;
    if (!cfg_.enable_proposal) w.gamma = 0.0;
    if (!cfg_.enable_distortion) w.eta = 0.0;
    return w;
  }

  GradSet make_grads() const {
    return {vanilla_.make_grads(), proposal_.make_grads(), pose_net_.make_grads(),
            std::vector<double>(2, 0.0)};
  }

  static void add_vec(std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  static void add_grads(GradSet& a, const GradSet& b) {
    add_vec(a.vanilla.trunk, b.vanilla.trunk);
    add_vec(a.vanilla.sigma, b.vanilla.sigma);
    add_vec(a.vanilla.color, b.vanilla.color);
    add_vec(a.proposal.trunk, b.proposal.trunk);
    add_vec(a.proposal.sigma, b.proposal.sigma);
    add_vec(a.pose.embed_pose, b.pose.embed_pose);
    add_vec(a.pose.embed_time, b.pose.embed_time);
    add_vec(a.pose.trunk, b.pose.trunk);
    add_vec(a.rho, b.rho);
  }

  template <class S>
  PoseT<S> pose_at(S t, PoseNetEval<S>& ev) const {
    return cfg_.use_pose_net ? pose_net_.forward(t, prior_, ev) : prior_.sample(t);
  }

  // Freeze the sampling for one event: vanilla distances for the three
  // renders, and the proposal-stage positions (world space) from the
  // t_curr ray.
  void prepare(const EventSample& es, EventWork& w) const {
    const Event& e = stream_.events[es.index];
    w.event = &e;
    w.t_samp = es.t_samp;
    w.frozen_hist = WeightedIntervals{};  // workspace is reused across events
    w.px = e.x;
    w.py = e.y;

    PoseNetEval<double> ev;
    const Vec3d dc = camera_.pixel_direction(w.px, w.py);
    auto sample_at = [&](double t, std::uint64_t salt) {
      const PoseT<double> p = pose_at(t, ev);
      const Vec3d dir = normalized(rotate(p.rotation, dc));
      return two_phase_sample(proposal_, p.translation, dir, cfg_.bounds,
                              cfg_.n_prop, cfg_.n_stages, cfg_.warp,
                              mix_seed(es.seed, salt));
    };
    const TwoPhaseSamples tp_i = sample_at(e.t_prev, 1);
    TwoPhaseSamples tp_j = sample_at(e.t_curr, 2);
    const TwoPhaseSamples tp_s = sample_at(es.t_samp, 3);
    w.vt_i = tp_i.vanilla_t;
    w.vt_j = tp_j.vanilla_t;
    w.vt_s = tp_s.vanilla_t;

    // Proposal supervision comes from the t_curr ray; positions frozen in
    // world space (detached from the pose).
    const PoseT<double> pj = pose_at(e.t_curr, ev);
    const Vec3d dir_j = normalized(rotate(pj.rotation, dc));
    const std::size_t n_stages = tp_j.stage_t.size();
    w.stage_hist.assign(tp_j.proposal.begin(), tp_j.proposal.end());
    w.stage_delta.assign(n_stages, {});
    w.stage_xw.assign(n_stages, {});
    for (std::size_t s = 0; s < n_stages; ++s) {
      const auto& edges = w.stage_hist[s].t_edges;
      w.stage_delta[s].resize(edges.size() - 1);
      for (std::size_t i = 0; i + 1 < edges.size(); ++i)
        w.stage_delta[s][i] = edges[i + 1] - edges[i];
      w.stage_xw[s].resize(tp_j.stage_t[s].size());
      for (std::size_t i = 0; i < tp_j.stage_t[s].size(); ++i)
        w.stage_xw[s][i] =
            warp(pj.translation + tp_j.stage_t[s][i] * dir_j, cfg_.warp);
    }
  }

  // Everything downstream of the frozen sampling, with current parameters.
  void forward(EventWork& w, LossTerms& out) const {
    const Event& e = *w.event;
    const double c_pos = softplus(rho_[0]);
    const double c_neg = softplus(rho_[1]);
    w.cbar = 0.5 * (c_pos + c_neg);
    const double c_p = e.polarity > 0 ? c_pos : c_neg;

    w.pose_i = pose_at(e.t_prev, w.pe_i);
    w.pose_j = pose_at(e.t_curr, w.pe_j);
    render_pixel(vanilla_, camera_, w.pose_i, w.px, w.py, w.vt_i,
                 cfg_.bounds.t_far, cfg_.warp, w.pr_i);
    render_pixel(vanilla_, camera_, w.pose_j, w.px, w.py, w.vt_j,
                 cfg_.bounds.t_far, cfg_.warp, w.pr_j);
    w.delta_hat = w.pr_j.ray.log_mono - w.pr_i.ray.log_mono;
    w.target = static_cast<double>(e.polarity) * c_p;
    w.terms.reconstruction =
        cfg_.enable_reconstruction
            ? loss_reconstruction(w.delta_hat, w.target, w.cbar)
            : 0.0;

    if (cfg_.enable_gradient) {
      w.pose_s = pose_at(Dual(w.t_samp, 1.0), w.pe_s);
      render_pixel(vanilla_, camera_, w.pose_s, w.px, w.py, w.vt_s,
                   cfg_.bounds.t_far, cfg_.warp, w.pr_s);
      w.g_pred = w.pr_s.ray.log_mono.d;
      w.g_gt = static_cast<double>(e.polarity) * c_p / (e.t_curr - e.t_prev);
      w.terms.gradient = loss_gradient(w.g_pred, w.g_gt);
    } else {
      w.terms.gradient = 0.0;
    }

    // Vanilla histogram along the t_curr ray (edges [t_1 .. t_N, t_far]).
    w.hist_j.t_edges.assign(w.vt_j.begin(), w.vt_j.end());
    w.hist_j.t_edges.push_back(cfg_.bounds.t_far);
    w.hist_j.s_edges.resize(w.hist_j.t_edges.size());
    for (std::size_t i = 0; i < w.hist_j.t_edges.size(); ++i)
      w.hist_j.s_edges[i] =
          normalize_s(std::min(w.hist_j.t_edges[i], cfg_.bounds.t_far),
                      cfg_.bounds, SMode::kLinear);
    w.hist_j.weights = w.pr_j.ray.weights;
    w.terms.distortion =
        cfg_.enable_distortion ? loss_distortion(w.hist_j) : 0.0;

    // Proposal stages: densities at the frozen positions, quadrature
    // weights over the frozen edges. The vanilla side is detached — frozen
    // the first time forward runs.
    w.terms.proposal = 0.0;
    if (cfg_.enable_proposal) {
      if (w.frozen_hist.weights.empty()) w.frozen_hist = w.hist_j;
      const std::size_t n_stages = w.stage_xw.size();
      w.stage_evals.resize(n_stages);
      w.stage_trans.resize(n_stages);
      for (std::size_t s = 0; s < n_stages; ++s) {
        const std::size_t n = w.stage_xw[s].size();
        w.stage_evals[s].resize(n);
        std::vector<double> sigma(n);
        for (std::size_t i = 0; i < n; ++i) {
          proposal_.eval(w.stage_xw[s][i], w.stage_evals[s][i]);
          sigma[i] = w.stage_evals[s][i].sigma;
        }
        auto& hist = w.stage_hist[s];
        hist.weights.assign(n, 0.0);
        w.stage_trans[s].assign(n, 0.0);
        double depth = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          w.stage_trans[s][i] = std::exp(-depth);
          hist.weights[i] =
              w.stage_trans[s][i] * (-std::expm1(-sigma[i] * w.stage_delta[s][i]));
          depth += sigma[i] * w.stage_delta[s][i];
        }
        w.terms.proposal += loss_proposal(w.frozen_hist, hist, w.cbar);
      }
    }
    out = w.terms;
  }

  void backward(EventWork& w, double scale, GradSet& g) const {
    const Event& e = *w.event;
    const LossWeights lw = effective_weights();
    double d_cbar = 0.0, d_cp = 0.0;

    // Reconstruction: adjoints on the two rendered logs.
    double d_log_j = 0.0, d_log_i = 0.0;
    if (cfg_.enable_reconstruction) {
      double d_pred = 0.0, d_target = 0.0;
      loss_reconstruction(w.delta_hat, w.target, w.cbar, lw.alpha * scale,
                          &d_pred, &d_target, &d_cbar);
      d_log_j += d_pred;
      d_log_i -= d_pred;
      d_cp += d_target * static_cast<double>(e.polarity);
    }

    // Distortion: direct adjoint on the t_curr quadrature weights.
    std::vector<double> d_w_j;
    const std::vector<double>* d_w_ptr = nullptr;
    if (cfg_.enable_distortion) {
      d_w_j.assign(w.hist_j.size(), 0.0);
      loss_distortion(w.hist_j, false, lw.eta * scale, &d_w_j);
      d_w_ptr = &d_w_j;
    }

    Quat<double> d_q{0.0, 0.0, 0.0, 0.0};
    Vec3d d_tr{};
    render_pixel_backward(vanilla_, w.pr_j, w.pose_j, d_log_j, d_w_ptr,
                          g.vanilla, &d_q, &d_tr);
    if (cfg_.use_pose_net) pose_net_.backward(w.pe_j, d_q, d_tr, g.pose);

    if (d_log_i != 0.0) {
      Quat<double> d_qi{0.0, 0.0, 0.0, 0.0};
      Vec3d d_ti{};
      render_pixel_backward(vanilla_, w.pr_i, w.pose_i, d_log_i,
                            static_cast<std::vector<double>*>(nullptr),
                            g.vanilla, &d_qi, &d_ti);
      if (cfg_.use_pose_net) pose_net_.backward(w.pe_i, d_qi, d_ti, g.pose);
    }

    // Gradient loss: reverse pass in dual arithmetic with the adjoint
    // seeded on the tangent output.
    if (cfg_.enable_gradient) {
      double d_gpred = 0.0, d_ggt = 0.0;
      loss_gradient(w.g_pred, w.g_gt, lw.beta * scale, &d_gpred, &d_ggt);
      Quat<Dual> d_qs{Dual(0.0), Dual(0.0), Dual(0.0), Dual(0.0)};
      Vec3<Dual> d_ts{};
      render_pixel_backward(vanilla_, w.pr_s, w.pose_s, Dual(d_gpred, 0.0),
                            static_cast<std::vector<Dual>*>(nullptr), g.vanilla,
                            &d_qs, &d_ts);
      if (cfg_.use_pose_net) pose_net_.backward(w.pe_s, d_qs, d_ts, g.pose);
      d_cp += d_ggt * static_cast<double>(e.polarity) / (e.t_curr - e.t_prev);
    }

    // Proposal loss: through the stage weights into the proposal field.
    if (cfg_.enable_proposal) {
      for (std::size_t s = 0; s < w.stage_xw.size(); ++s) {
        const auto& hist = w.stage_hist[s];
        std::vector<double> d_w(hist.size(), 0.0);
        loss_proposal(w.frozen_hist, hist, w.cbar, lw.gamma * scale, &d_w,
                      &d_cbar);
        std::vector<double> d_sigma;
        weights_backward(w.stage_delta[s], hist.weights, w.stage_trans[s], d_w,
                         d_sigma);
        for (std::size_t i = 0; i < d_sigma.size(); ++i)
          proposal_.backward(w.stage_evals[s][i], d_sigma[i], g.proposal,
                             static_cast<Vec3d*>(nullptr));
      }
    }

    // Thresholds: cbar feeds both, the event's own polarity feeds one.
    if (cfg_.learn_thresholds) {
      const double d_cpos = 0.5 * d_cbar + (e.polarity > 0 ? d_cp : 0.0);
      const double d_cneg = 0.5 * d_cbar + (e.polarity > 0 ? 0.0 : d_cp);
      g.rho[0] += d_cpos * sigmoid(rho_[0]);
      g.rho[1] += d_cneg * sigmoid(rho_[1]);
    }
  }

  void check_finite(const GradSet& g) const {
    struct Named { const char* name; const std::vector<double>* v; };
    const Named all[] = {{"vanilla.trunk", &g.vanilla.trunk},
                         {"vanilla.sigma", &g.vanilla.sigma},
                         {"vanilla.color", &g.vanilla.color},
                         {"proposal.trunk", &g.proposal.trunk},
                         {"proposal.sigma", &g.proposal.sigma},
                         {"pose.embed_pose", &g.pose.embed_pose},
                         {"pose.embed_time", &g.pose.embed_time},
                         {"pose.trunk", &g.pose.trunk},
                         {"thresholds", &g.rho}};
    for (const Named& n : all)
      for (double v : *n.v)
        if (!std::isfinite(v))
          throw std::runtime_error(
              std::string("trainer: non-finite gradient in block ") + n.name);
  }

  struct AdamState {
    std::vector<double> m, v;
  };

  // Weights before decay_end get cfg_.weight_decay; the remainder gets
  // tail_decay (used to give the pose-net output layer its own pull).
  void adam_step(std::vector<double>& w, const std::vector<double>& grad,
                 AdamState& st, double lr, bool decay, std::size_t decay_end,
                 double tail_decay = 0.0) {
    if (st.m.size() != w.size()) {
      st.m.assign(w.size(), 0.0);
      st.v.assign(w.size(), 0.0);
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, step_);
    const double c2 = 1.0 - std::pow(b2, step_);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = grad[i];
      if (decay) gi += (i < decay_end ? cfg_.weight_decay : tail_decay) * w[i];
      st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
      st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
    }
  }

  void apply_update(const GradSet& g) {
    ++step_;
    const double scale = schedule_scale(cfg_, iteration_);
    const double lr = cfg_.lr_main * scale;
    const double lr_th = cfg_.lr_threshold * scale;
    const std::size_t all = static_cast<std::size_t>(-1);
    adam_step(vanilla_.trunk().weights(), g.vanilla.trunk, adam_[0], lr, true, all);
    adam_step(vanilla_.sigma_head().weights(), g.vanilla.sigma, adam_[1], lr, true, all);
    adam_step(vanilla_.color_head().weights(), g.vanilla.color, adam_[2], lr, true, all);
    adam_step(proposal_.trunk().weights(), g.proposal.trunk, adam_[3], lr, true, all);
    adam_step(proposal_.sigma_head().weights(), g.proposal.sigma, adam_[4], lr, true, all);
    if (cfg_.use_pose_net &&
        iteration_ >= cfg_.pose_warmup * cfg_.iterations) {
      // Poses get a much smaller rate than the field: Adam's normalized
      // steps otherwise walk the residual far outside the noise scale
      // before the field can supply a useful signal.
      const double lr_pose = cfg_.lr_pose * scale;
      adam_step(pose_net_.embed_pose().weights(), g.pose.embed_pose, adam_[5],
                lr_pose, true, all);
      adam_step(pose_net_.embed_time().weights(), g.pose.embed_time, adam_[6],
                lr_pose, true, all);
      // The residual output layer gets its own decay: pulling it toward
      // zero anchors the correction to the prior in directions the events
      // constrain only weakly.
      adam_step(pose_net_.trunk().weights(), g.pose.trunk, adam_[7], lr_pose,
                true, pose_net_.trunk_output_offset(), cfg_.pose_decay);
    }
    if (cfg_.learn_thresholds)
      adam_step(rho_, g.rho, adam_[8], lr_th, false, 0);
  }

  TrainConfig cfg_;
  EventStream stream_;
  Trajectory prior_;
  Camera camera_;
  VanillaField vanilla_;
  ProposalField proposal_;
  PoseNet pose_net_;
  std::vector<double> rho_;
  std::mt19937_64 rng_;
  AdamState adam_[9];
  double avg_samples_{1.0};
  int iteration_{0};
  int step_{0};
};

}  // namespace evrf
