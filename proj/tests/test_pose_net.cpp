#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evrf/pose_net.hpp"

using namespace evrf;

namespace {

Trajectory prior_trajectory() {
  std::vector<Pose> poses;
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.2 * i;
    poses.push_back({quat_normalized(Quatd{1.0, 0.05 * i, -0.03 * i, 0.02 * i}),
                     Vec3d{3.0 + 0.2 * t, 0.4 * t, -0.1 * t}, t});
  }
  return Trajectory(poses);
}

PoseNetConfig small_config() {
  PoseNetConfig cfg;
  cfg.width = 24;
  cfg.n_hidden = 2;
  cfg.n_freq = 2;
  return cfg;
}

}  // namespace

TEST_CASE("zero-initialized correction is the identity") {
  PoseNet net(small_config());
  std::mt19937_64 rng(31);
  net.init(rng);  // init zeroes the output layer
  const Trajectory prior = prior_trajectory();
  PoseNetEval<double> ev;
  for (double t = 0.0; t <= 2.0; t += 0.13) {
    const PoseT<double> p = net.forward(t, prior, ev);
    const PoseT<double> q = prior.sample(t);
    CHECK(p.rotation.w == Catch::Approx(q.rotation.w).margin(1e-12));
    CHECK(p.rotation.x == Catch::Approx(q.rotation.x).margin(1e-12));
    CHECK(p.translation.x == Catch::Approx(q.translation.x).margin(1e-12));
    CHECK(p.translation.z == Catch::Approx(q.translation.z).margin(1e-12));
  }
}

TEST_CASE("output quaternion is unit for random parameters") {
  PoseNet net(small_config());
  std::mt19937_64 rng(33);
  net.init(rng);
  // Overwrite the zeroed output layer with random values.
  net.trunk().init(rng);
  const Trajectory prior = prior_trajectory();
  PoseNetEval<double> ev;
  for (double t = 0.05; t <= 1.95; t += 0.1) {
    const PoseT<double> p = net.forward(t, prior, ev);
    CHECK(quat_norm(p.rotation) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("query outside the prior span is rejected") {
  PoseNet net(small_config());
  std::mt19937_64 rng(35);
  net.init(rng);
  const Trajectory prior = prior_trajectory();
  PoseNetEval<double> ev;
  CHECK_THROWS_AS(net.forward(-0.1, prior, ev), std::out_of_range);
  CHECK_THROWS_AS(net.forward(2.5, prior, ev), std::out_of_range);
}

TEST_CASE("time derivative from the dual forward matches finite differences") {
  PoseNet net(small_config());
  std::mt19937_64 rng(37);
  net.init(rng);
  net.trunk().init(rng);
  const Trajectory prior = prior_trajectory();
  const double h = 1e-6;
  PoseNetEval<Dual> evd;
  PoseNetEval<double> ev;
  std::uniform_real_distribution<double> ut(0.05, 1.95);
  for (int probe = 0; probe < 50; ++probe) {
    const double t = ut(rng);
    const PoseT<Dual> p = net.forward(Dual(t, 1.0), prior, evd);
    const PoseT<double> hi = net.forward(t + h, prior, ev);
    const PoseT<double> lo = net.forward(t - h, prior, ev);
    const double fd_qw = (hi.rotation.w - lo.rotation.w) / (2.0 * h);
    const double fd_tx = (hi.translation.x - lo.translation.x) / (2.0 * h);
    const double denom_q = std::max({std::fabs(fd_qw), std::fabs(p.rotation.w.d), 1e-4});
    CHECK(std::fabs(p.rotation.w.d - fd_qw) / denom_q < 1e-3);
    const double denom_t = std::max({std::fabs(fd_tx), std::fabs(p.translation.x.d), 1e-4});
    CHECK(std::fabs(p.translation.x.d - fd_tx) / denom_t < 1e-3);
  }
}

TEST_CASE("parameter gradients match finite differences") {
  PoseNet net(small_config());
  std::mt19937_64 rng(41);
  net.init(rng);
  net.trunk().init(rng);
  const Trajectory prior = prior_trajectory();
  const Quatd probe_q{0.3, -0.2, 0.5, 0.1};
  const Vec3d probe_t{0.7, -0.4, 0.2};
  const double h = 1e-5;

  auto objective = [&](double t) {
    PoseNetEval<double> ev;
    const PoseT<double> p = net.forward(t, prior, ev);
    return quat_dot(probe_q, p.rotation) + dot(probe_t, p.translation);
  };

  std::uniform_real_distribution<double> ut(0.05, 1.95);
  for (int probe = 0; probe < 50; ++probe) {
    const double t = ut(rng);
    PoseNetEval<double> ev;
    net.forward(t, prior, ev);
    PoseNetGrads grads = net.make_grads();
    net.backward(ev, probe_q, probe_t, grads);

    struct Pick { std::vector<double>* w; std::vector<double>* g; };
    Pick picks[3] = {{&net.embed_pose().weights(), &grads.embed_pose},
                     {&net.embed_time().weights(), &grads.embed_time},
                     {&net.trunk().weights(), &grads.trunk}};
    for (const Pick& pk : picks) {
      std::uniform_int_distribution<std::size_t> idx(0, pk.w->size() - 1);
      const std::size_t i = idx(rng);
      const double keep = (*pk.w)[i];
      (*pk.w)[i] = keep + h;
      const double hi = objective(t);
      (*pk.w)[i] = keep - h;
      const double lo = objective(t);
      (*pk.w)[i] = keep;
      const double fd = (hi - lo) / (2.0 * h);
      const double an = (*pk.g)[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-7});
      CHECK(std::fabs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("corrected pose is continuous in time") {
  PoseNet net(small_config());
  std::mt19937_64 rng(43);
  net.init(rng);
  net.trunk().init(rng);
  const Trajectory prior = prior_trajectory();
  PoseNetEval<double> ev;
  const double dt = 1e-4;
  PoseT<double> prev = net.forward(0.0, prior, ev);
  double max_step = 0.0;
  for (double t = dt; t <= 2.0; t += dt) {
    const PoseT<double> cur = net.forward(t, prior, ev);
    const double step = norm(cur.translation - prev.translation) +
                        std::fabs(cur.rotation.w - prev.rotation.w) +
                        std::fabs(cur.rotation.x - prev.rotation.x);
    max_step = std::max(max_step, step);
    prev = cur;
  }
  // Lipschitz-style bound: no jumps anywhere on the span.
  CHECK(max_step < 100.0 * dt);
}

TEST_CASE("trunk output-layer offset covers the final block") {
  PoseNet net(small_config());
  const std::size_t off = net.trunk_output_offset();
  const std::size_t final_block = 24 * 7 + 7;
  CHECK(net.trunk().param_count() - off == final_block);
}

TEST_CASE("corrected trajectory export keeps timestamps and poses") {
  PoseNet net(small_config());
  std::mt19937_64 rng(47);
  net.init(rng);
  const Trajectory prior = prior_trajectory();
  const Trajectory out = correct_trajectory(net, prior, {0.1, 0.5, 1.0, 1.9});
  CHECK(out.poses().size() == 4);
  const Pose p = out.interpolate(0.5);
  const PoseT<double> q = prior.sample(0.5);
  CHECK(p.translation.x == Catch::Approx(q.translation.x).margin(1e-12));
}
