#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evrf/field.hpp"

using namespace evrf;

TEST_CASE("encoding basics") {
  std::vector<double> out;
  SECTION("zero input: identity 0, sin 0, cos 1") {
    encode(Vec3d{0.0, 0.0, 0.0}, 3, out);
    REQUIRE(out.size() == 3 + 6 * 3);
    for (int i = 0; i < 3; ++i) CHECK(out[i] == 0.0);
    for (int l = 0; l < 3; ++l) {
      for (int a = 0; a < 3; ++a) CHECK(out[3 + 6 * l + a] == 0.0);
      for (int a = 0; a < 3; ++a) CHECK(out[3 + 6 * l + 3 + a] == 1.0);
    }
  }
  SECTION("L=1, x=(1,0,0): sin(pi)=0, cos(pi)=-1 on axis 0") {
    encode(Vec3d{1.0, 0.0, 0.0}, 1, out);
    REQUIRE(out.size() == 9);
    CHECK(out[3] == Catch::Approx(0.0).margin(1e-12));
    CHECK(out[6] == Catch::Approx(-1.0));
  }
  SECTION("output length is 3 + 6L") {
    for (int L = 1; L <= 12; ++L) {
      encode(Vec3d{0.1, 0.2, 0.3}, L, out);
      CHECK(out.size() == static_cast<std::size_t>(3 + 6 * L));
    }
  }
}

TEST_CASE("contraction warp") {
  SECTION("inside the unit ball: unchanged") {
    const Vec3d y = warp(Vec3d{0.3, -0.2, 0.1}, WarpMode::kContract);
    CHECK(y.x == 0.3);
    CHECK(y.y == -0.2);
  }
  SECTION("x = (2,0,0) maps to (1.5,0,0)") {
    const Vec3d y = warp(Vec3d{2.0, 0.0, 0.0}, WarpMode::kContract);
    CHECK(y.x == Catch::Approx(1.5));
    CHECK(y.y == 0.0);
  }
  SECTION("far points approach radius 2 from below") {
    const Vec3d y = warp(Vec3d{1e6, 0.0, 0.0}, WarpMode::kContract);
    CHECK(norm(y) == Catch::Approx(2.0 - 1e-6));
    CHECK(norm(y) < 2.0);
  }
  SECTION("norm bound holds everywhere") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> uni(-50.0, 50.0);
    for (int i = 0; i < 1000; ++i) {
      const Vec3d x{uni(rng), uni(rng), uni(rng)};
      const double n = norm(warp(x, WarpMode::kContract));
      CHECK(n <= std::min(norm(x), 2.0) + 1e-12);
    }
  }
  SECTION("contract backward matches finite differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(-3.0, 3.0);
    for (int i = 0; i < 50; ++i) {
      const Vec3d x{uni(rng), uni(rng), uni(rng)};
      const Vec3d seed{0.7, -0.3, 0.4};
      Vec3d grad{};
      warp_backward(x, WarpMode::kContract, seed, grad);
      const double h = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Vec3d xp = x, xm = x;
        xp[a] += h;
        xm[a] -= h;
        const double fd =
            (dot(seed, warp(xp, WarpMode::kContract)) - dot(seed, warp(xm, WarpMode::kContract))) /
            (2.0 * h);
        CHECK(grad[a] == Catch::Approx(fd).margin(1e-6));
      }
    }
  }
}

TEST_CASE("ndc warp domain") {
  CHECK_THROWS_AS(warp(Vec3d{0.0, 0.0, 1.0}, WarpMode::kNdc), std::domain_error);
  const Vec3d y = warp(Vec3d{1.0, 2.0, -2.0}, WarpMode::kNdc);
  CHECK(y.x == Catch::Approx(0.5));
  CHECK(y.y == Catch::Approx(1.0));
  CHECK(y.z == Catch::Approx(0.0));
}

TEST_CASE("field outputs") {
  FieldConfig cfg;
  cfg.vanilla_depth = 2;
  cfg.vanilla_width = 16;
  cfg.proposal_depth = 2;
  cfg.proposal_width = 8;
  cfg.encoding = {4, 2};
  std::mt19937_64 rng(1);

  SECTION("zero-initialized sigma head gives softplus(0)") {
    VanillaField f(cfg);
    f.init(rng);
    f.sigma_head().zero_output_layer();
    VanillaEval<double> ev;
    f.eval(Vec3d{0.2, 0.1, -0.3}, Vec3d{0.0, 0.0, 1.0}, ev);
    CHECK(ev.sigma == Catch::Approx(std::log(2.0)));

    ProposalField p(cfg);
    p.init(rng);
    p.sigma_head().zero_output_layer();
    ProposalEval<double> pev;
    p.eval(Vec3d{0.2, 0.1, -0.3}, pev);
    CHECK(pev.sigma == Catch::Approx(std::log(2.0)));
  }

  SECTION("radiance respects the floor; density is non-negative; eval is pure") {
    VanillaField f(cfg);
    f.init(rng);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      const Vec3d x{uni(rng), uni(rng), uni(rng)};
      const Vec3d d = normalized(Vec3d{uni(rng), uni(rng), uni(rng) + 1.5});
      VanillaEval<double> a, b;
      f.eval(x, d, a);
      f.eval(x, d, b);
      CHECK(a.sigma >= 0.0);
      for (int c = 0; c < 3; ++c) CHECK(a.color[c] >= cfg.radiance_floor);
      CHECK(a.sigma == b.sigma);
      CHECK(a.color.x == b.color.x);
    }
  }

  SECTION("proposal is smaller than vanilla at the paper-scale config") {
    FieldConfig paper;
    paper.vanilla_depth = 8;
    paper.vanilla_width = 1024;
    paper.proposal_depth = 4;
    paper.proposal_width = 256;
    VanillaField v(paper);
    ProposalField p(paper);
    CHECK(p.param_count() < v.param_count());
  }
}

TEST_CASE("field parameter gradients match central finite differences") {
  FieldConfig cfg;
  cfg.vanilla_depth = 2;
  cfg.vanilla_width = 12;
  cfg.proposal_depth = 2;
  cfg.proposal_width = 8;
  cfg.encoding = {3, 2};
  std::mt19937_64 rng(7);
  VanillaField f(cfg);
  f.init(rng);

  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const double h = 1e-4;
  const Vec3d probe_color{0.31, 0.55, 0.14};

  auto objective = [&](const Vec3d& x, const Vec3d& d) {
    VanillaEval<double> ev;
    f.eval(x, d, ev);
    return ev.sigma + dot(probe_color, ev.color);
  };

  for (int probe = 0; probe < 100; ++probe) {
    const Vec3d x{uni(rng), uni(rng), uni(rng)};
    const Vec3d d = normalized(Vec3d{uni(rng), uni(rng), uni(rng) + 1.2});

    VanillaEval<double> ev;
    f.eval(x, d, ev);
    VanillaGrads grads = f.make_grads();
    f.backward(ev, 1.0, probe_color, grads,
               static_cast<Vec3<double>*>(nullptr), static_cast<Vec3<double>*>(nullptr));

    // Sample one coordinate from each block.
    struct Pick { std::vector<double>* w; std::vector<double>* g; };
    Pick picks[3] = {{&f.trunk().weights(), &grads.trunk},
                     {&f.sigma_head().weights(), &grads.sigma},
                     {&f.color_head().weights(), &grads.color}};
    for (const Pick& pk : picks) {
      std::uniform_int_distribution<std::size_t> idx(0, pk.w->size() - 1);
      const std::size_t i = idx(rng);
      const double keep = (*pk.w)[i];
      (*pk.w)[i] = keep + h;
      const double hi = objective(x, d);
      (*pk.w)[i] = keep - h;
      const double lo = objective(x, d);
      (*pk.w)[i] = keep;
      const double fd = (hi - lo) / (2.0 * h);
      const double an = (*pk.g)[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      CHECK(std::fabs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("field input gradients match finite differences") {
  FieldConfig cfg;
  cfg.vanilla_depth = 2;
  cfg.vanilla_width = 12;
  cfg.encoding = {3, 2};
  std::mt19937_64 rng(9);
  VanillaField f(cfg);
  f.init(rng);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const Vec3d probe_color{0.2, 0.4, 0.4};

  for (int probe = 0; probe < 20; ++probe) {
    const Vec3d x{uni(rng), uni(rng), uni(rng)};
    const Vec3d d = normalized(Vec3d{uni(rng), uni(rng), uni(rng) + 1.2});
    VanillaEval<double> ev;
    f.eval(x, d, ev);
    VanillaGrads grads = f.make_grads();
    Vec3<double> d_x{}, d_dir{};
    f.backward(ev, 1.0, probe_color, grads, &d_x, &d_dir);

    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
      Vec3d xp = x, xm = x;
      xp[a] += h;
      xm[a] -= h;
      VanillaEval<double> e1, e2;
      f.eval(xp, d, e1);
      f.eval(xm, d, e2);
      const double fd = ((e1.sigma + dot(probe_color, e1.color)) -
                         (e2.sigma + dot(probe_color, e2.color))) / (2.0 * h);
      CHECK(d_x[a] == Catch::Approx(fd).margin(1e-5));
    }
  }
}

TEST_CASE("dual-number forward matches finite differences along a path") {
  FieldConfig cfg;
  cfg.vanilla_depth = 2;
  cfg.vanilla_width = 12;
  cfg.encoding = {3, 2};
  std::mt19937_64 rng(11);
  VanillaField f(cfg);
  f.init(rng);

  // Path x(t) = x0 + t * v; check d sigma/dt from Dual against FD.
  const Vec3d x0{0.1, -0.2, 0.3};
  const Vec3d v{0.5, 0.7, -0.2};
  const Vec3d d{0.0, 0.0, 1.0};
  const double t = 0.37;

  VanillaEval<Dual> ev;
  Vec3<Dual> x{Dual(x0.x + t * v.x, v.x), Dual(x0.y + t * v.y, v.y),
               Dual(x0.z + t * v.z, v.z)};
  f.eval(x, lift(d), ev);

  const double h = 1e-6;
  VanillaEval<double> ep, em;
  f.eval(x0 + (t + h) * v, d, ep);
  f.eval(x0 + (t - h) * v, d, em);
  CHECK(ev.sigma.d == Catch::Approx((ep.sigma - em.sigma) / (2.0 * h)).margin(1e-6));
  CHECK(ev.color.x.d ==
        Catch::Approx((ep.color.x - em.color.x) / (2.0 * h)).margin(1e-6));
}
