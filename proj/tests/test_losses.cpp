#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evrf/losses.hpp"

using namespace evrf;

namespace {

WeightedIntervals make_intervals(std::vector<double> edges, std::vector<double> w) {
  WeightedIntervals h;
  h.t_edges = edges;
  h.s_edges = std::move(edges);
  h.weights = std::move(w);
  return h;
}

}  // namespace

TEST_CASE("proposal loss") {
  SECTION("proposal upper-bounding vanilla gives zero") {
    const auto vanilla = make_intervals({0.0, 0.5, 1.0}, {0.3, 0.4});
    const auto prop = make_intervals({0.0, 1.0}, {0.9});
    CHECK(loss_proposal(vanilla, prop, 0.25) == 0.0);
  }
  SECTION("plug-in value 1.28") {
    const auto vanilla = make_intervals({0.0, 1.0}, {0.5});
    const auto prop = make_intervals({0.0, 1.0}, {0.3});
    CHECK(loss_proposal(vanilla, prop, 0.25) == Catch::Approx(1.28).margin(1e-9));
  }
  SECTION("doubling cbar quarters the loss") {
    const auto vanilla = make_intervals({0.0, 1.0}, {0.5});
    const auto prop = make_intervals({0.0, 1.0}, {0.3});
    const double l1 = loss_proposal(vanilla, prop, 0.25);
    const double l2 = loss_proposal(vanilla, prop, 0.5);
    CHECK(l2 == Catch::Approx(l1 / 4.0));
  }
  SECTION("near-zero vanilla weights are skipped") {
    const auto vanilla = make_intervals({0.0, 0.5, 1.0}, {1e-12, 0.0});
    const auto prop = make_intervals({0.0, 1.0}, {0.0});
    CHECK(loss_proposal(vanilla, prop, 0.25) == 0.0);
  }
  SECTION("adjoints match finite differences") {
    const auto vanilla = make_intervals({0.0, 0.4, 0.7, 1.0}, {0.5, 0.2, 0.25});
    auto prop = make_intervals({0.0, 0.3, 0.8, 1.0}, {0.1, 0.15, 0.05});
    std::vector<double> d_w(3, 0.0);
    double d_cbar = 0.0;
    const double cbar = 0.25;
    loss_proposal(vanilla, prop, cbar, 1.0, &d_w, &d_cbar);
    const double h = 1e-7;
    for (std::size_t j = 0; j < 3; ++j) {
      prop.weights[j] += h;
      const double hi = loss_proposal(vanilla, prop, cbar);
      prop.weights[j] -= 2.0 * h;
      const double lo = loss_proposal(vanilla, prop, cbar);
      prop.weights[j] += h;
      CHECK(d_w[j] == Catch::Approx((hi - lo) / (2.0 * h)).margin(1e-6));
    }
    const double fd_c = (loss_proposal(vanilla, prop, cbar + h) -
                         loss_proposal(vanilla, prop, cbar - h)) / (2.0 * h);
    CHECK(d_cbar == Catch::Approx(fd_c).margin(1e-5));
  }
}

TEST_CASE("reconstruction loss") {
  CHECK(loss_reconstruction(0.25, 0.25, 0.25) == 0.0);
  CHECK(loss_reconstruction(0.5, 0.25, 0.25) == Catch::Approx(1.0).margin(1e-9));
  SECTION("symmetric under joint sign flip") {
    CHECK(loss_reconstruction(-0.5, -0.25, 0.25) ==
          Catch::Approx(loss_reconstruction(0.5, 0.25, 0.25)));
  }
  SECTION("adjoints match finite differences") {
    double d_pred = 0.0, d_target = 0.0, d_cbar = 0.0;
    loss_reconstruction(0.7, 0.2, 0.3, 1.0, &d_pred, &d_target, &d_cbar);
    const double h = 1e-7;
    CHECK(d_pred == Catch::Approx((loss_reconstruction(0.7 + h, 0.2, 0.3) -
                                   loss_reconstruction(0.7 - h, 0.2, 0.3)) / (2 * h)));
    CHECK(d_target == Catch::Approx((loss_reconstruction(0.7, 0.2 + h, 0.3) -
                                     loss_reconstruction(0.7, 0.2 - h, 0.3)) / (2 * h)));
    CHECK(d_cbar == Catch::Approx((loss_reconstruction(0.7, 0.2, 0.3 + h) -
                                   loss_reconstruction(0.7, 0.2, 0.3 - h)) / (2 * h)));
  }
  CHECK_THROWS_AS(loss_reconstruction(0.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("gradient loss") {
  SECTION("ground-truth gradient from the event") {
    Event e{0, 0, +1, 1.0, 1.1};
    ContrastThresholds th;  // 0.25 / 0.25
    CHECK(event_time_gradient(e, th) == Catch::Approx(2.5));
    e.polarity = -1;
    CHECK(event_time_gradient(e, th) == Catch::Approx(-2.5));
    e.t_prev = e.t_curr;
    CHECK_THROWS_AS(event_time_gradient(e, th), std::invalid_argument);
  }
  CHECK(loss_gradient(2.5, 2.5) == 0.0);
  CHECK(loss_gradient(2.0, 2.5) == Catch::Approx(0.2).margin(1e-9));
  SECTION("scale invariance") {
    CHECK(loss_gradient(2.0 * 7.5, 2.5 * 7.5) == Catch::Approx(0.2));
    CHECK(loss_gradient(-2.0, -2.5) == Catch::Approx(0.2));
  }
  SECTION("adjoints match finite differences") {
    double d_pred = 0.0, d_gt = 0.0;
    loss_gradient(2.0, 2.5, 1.0, &d_pred, &d_gt);
    const double h = 1e-7;
    CHECK(d_pred == Catch::Approx((loss_gradient(2.0 + h, 2.5) -
                                   loss_gradient(2.0 - h, 2.5)) / (2 * h)));
    CHECK(d_gt == Catch::Approx((loss_gradient(2.0, 2.5 + h) -
                                 loss_gradient(2.0, 2.5 - h)) / (2 * h)));
  }
}

TEST_CASE("distortion loss") {
  SECTION("single nonzero weight gives zero") {
    const auto h = make_intervals({0.0, 0.5, 1.0}, {0.8, 0.0});
    CHECK(loss_distortion(h) == 0.0);
  }
  SECTION("plug-in value 0.25") {
    const auto h = make_intervals({0.0, 0.5, 1.0}, {0.5, 0.5});
    CHECK(loss_distortion(h) == Catch::Approx(0.25).margin(1e-9));
  }
  SECTION("concentration beats spreading") {
    const auto spread = make_intervals({0.0, 0.25, 0.5, 0.75, 1.0},
                                       {0.25, 0.25, 0.25, 0.25});
    const auto tight = make_intervals({0.0, 0.25, 0.5, 0.75, 1.0},
                                      {0.0, 0.5, 0.5, 0.0});
    CHECK(loss_distortion(tight) < loss_distortion(spread));
  }
  SECTION("quadratic under uniform weight scaling") {
    const auto h1 = make_intervals({0.0, 0.3, 0.9, 1.0}, {0.2, 0.3, 0.1});
    const auto h2 = make_intervals({0.0, 0.3, 0.9, 1.0}, {0.4, 0.6, 0.2});
    CHECK(loss_distortion(h2) == Catch::Approx(4.0 * loss_distortion(h1)));
  }
  SECTION("self-term adds a positive contribution") {
    const auto h = make_intervals({0.0, 0.5, 1.0}, {0.5, 0.5});
    CHECK(loss_distortion(h, true) > loss_distortion(h, false));
    CHECK(loss_distortion(h, true) ==
          Catch::Approx(0.25 + 2.0 * 0.25 * 0.5 / 3.0));
  }
  SECTION("weight adjoints match finite differences") {
    auto h = make_intervals({0.0, 0.2, 0.55, 0.8, 1.0}, {0.1, 0.4, 0.2, 0.15});
    std::vector<double> d_w(4, 0.0);
    loss_distortion(h, false, 1.0, &d_w);
    const double eps = 1e-7;
    for (std::size_t i = 0; i < 4; ++i) {
      h.weights[i] += eps;
      const double hi = loss_distortion(h);
      h.weights[i] -= 2.0 * eps;
      const double lo = loss_distortion(h);
      h.weights[i] += eps;
      CHECK(d_w[i] == Catch::Approx((hi - lo) / (2.0 * eps)).margin(1e-6));
    }
  }
}

TEST_CASE("total loss") {
  const LossWeights lw;
  SECTION("paper weights on unit components give 1.0045") {
    std::vector<LossTerms> batch{{1.0, 1.0, 1.0, 1.0}};
    CHECK(total_loss(batch, lw) == Catch::Approx(1.0045).margin(1e-12));
  }
  SECTION("all zero components give zero") {
    std::vector<LossTerms> batch{{}, {}};
    CHECK(total_loss(batch, lw) == 0.0);
  }
  SECTION("duplicating the batch leaves the mean unchanged") {
    std::vector<LossTerms> batch{{0.5, 0.1, 0.7, 0.3}, {1.5, 0.0, 0.2, 0.9}};
    std::vector<LossTerms> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    CHECK(total_loss(doubled, lw) == Catch::Approx(total_loss(batch, lw)));
  }
  SECTION("empty batch rejected") {
    CHECK_THROWS_AS(total_loss({}, lw), std::invalid_argument);
  }
}
