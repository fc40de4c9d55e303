#pragma once

// The four normalized training losses and their weighted total, with the
// scalar derivative helpers the trainer chains into the render backward.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evrf/events.hpp"
#include "evrf/sampling.hpp"

namespace evrf {

struct LossWeights {
  double alpha{1.00};   // reconstruction
  double beta{0.001};   // gradient
  double gamma{0.0025}; // proposal
  double eta{0.001};    // distortion

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || eta < 0.0)
      throw std::invalid_argument("loss weights must be >= 0");
  }
};

// Minimum vanilla weight for a proposal-loss term; below this the penalty
// is dropped instead of dividing by ~zero.
constexpr double kProposalWeightFloor = 1e-9;

// l_p = sum_i (1/w_i) max(0, (w_i - B(T_i)) / cbar)^2 over the vanilla
// intervals, with B the full-overlap bound of the proposal histogram. The
// vanilla histogram is treated as a constant (distillation direction); when
// d_prop_w is non-null the adjoint w.r.t. the proposal weights is
// accumulated (scaled by d_out), and d_cbar likewise.
inline double loss_proposal(const WeightedIntervals& vanilla,
                            const WeightedIntervals& proposal, double cbar,
                            double d_out = 0.0,
                            std::vector<double>* d_prop_w = nullptr,
                            double* d_cbar = nullptr) {
  if (!(cbar > 0.0)) throw std::invalid_argument("loss_proposal: cbar must be > 0");
  double total = 0.0;
  for (std::size_t i = 0; i < vanilla.size(); ++i) {
    const double w = vanilla.weights[i];
    if (w <= kProposalWeightFloor) continue;
    const double t0 = vanilla.t_edges[i], t1 = vanilla.t_edges[i + 1];
    const double b = bound(proposal, t0, t1);
    const double gap = w - b;
    if (gap <= 0.0) continue;
    const double scaled = gap / cbar;
    total += scaled * scaled / w;
    if (d_prop_w) {
      const double d_gap = d_out * 2.0 * scaled / (w * cbar);
      for (std::size_t j = 0; j < proposal.size(); ++j)
        if (proposal.t_edges[j] <= t1 && proposal.t_edges[j + 1] >= t0)
          (*d_prop_w)[j] -= d_gap;  // d(gap)/d(w_hat_j) = -1 on overlap
    }
    if (d_cbar) *d_cbar -= d_out * 2.0 * scaled * scaled / (w * cbar);
  }
  return total;
}

// l_r = (pred - target)^2 / cbar^2, the event-normalized MSE of the
// log-radiance change over the event's span.
inline double loss_reconstruction(double pred, double target, double cbar,
                                  double d_out = 0.0, double* d_pred = nullptr,
                                  double* d_target = nullptr,
                                  double* d_cbar = nullptr) {
  if (!(cbar > 0.0))
    throw std::invalid_argument("loss_reconstruction: cbar must be > 0");
  const double diff = pred - target;
  const double value = diff * diff / (cbar * cbar);
  if (d_pred) *d_pred += d_out * 2.0 * diff / (cbar * cbar);
  if (d_target) *d_target -= d_out * 2.0 * diff / (cbar * cbar);
  if (d_cbar) *d_cbar -= d_out * 2.0 * value / cbar;
  return value;
}

// Per-event ground-truth log-radiance time gradient p C^p / span.
inline double event_time_gradient(const Event& e, const ContrastThresholds& th,
                                  double* d_threshold = nullptr) {
  const double span = e.t_curr - e.t_prev;
  if (!(span > 0.0))
    throw std::invalid_argument("event_time_gradient: degenerate zero-span event");
  const double c = e.polarity > 0 ? th.c_pos : th.c_neg;
  if (d_threshold) *d_threshold = static_cast<double>(e.polarity) / span;
  return static_cast<double>(e.polarity) * c / span;
}

// l_g = |(g_gt - g_pred) / g_gt|; scale-invariant relative error of the
// predicted log-radiance gradient.
inline double loss_gradient(double g_pred, double g_gt, double d_out = 0.0,
                            double* d_pred = nullptr, double* d_gt = nullptr) {
  if (g_gt == 0.0) throw std::invalid_argument("loss_gradient: g_gt must be nonzero");
  const double r = (g_gt - g_pred) / g_gt;
  const double s = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  if (d_pred) *d_pred -= d_out * s / g_gt;
  if (d_gt) *d_gt += d_out * s * g_pred / (g_gt * g_gt);
  return std::fabs(r);
}

// l_d = sum over ordered pairs i != j of w_i w_j |mid_i - mid_j| in
// normalized s-space. The intra-interval self-term sum w_i^2 width_i / 3 is
// off by default (cross terms only) and available for comparison.
inline double loss_distortion(const WeightedIntervals& h,
                              bool include_self = false, double d_out = 0.0,
                              std::vector<double>* d_w = nullptr) {
  const std::size_t n = h.size();
  if (h.s_edges.size() != n + 1)
    throw std::invalid_argument("loss_distortion: s_edges missing");
  static thread_local std::vector<double> mid;
  mid.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    mid[i] = 0.5 * (h.s_edges[i] + h.s_edges[i + 1]);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row += h.weights[j] * std::fabs(mid[i] - mid[j]);
    total += h.weights[i] * row;
    if (d_w) (*d_w)[i] += d_out * 2.0 * row;  // each pair appears twice
  }
  if (include_self) {
    for (std::size_t i = 0; i < n; ++i) {
      const double width = h.s_edges[i + 1] - h.s_edges[i];
      total += h.weights[i] * h.weights[i] * width / 3.0;
      if (d_w) (*d_w)[i] += d_out * 2.0 * h.weights[i] * width / 3.0;
    }
  }
  return total;
}

struct LossTerms {
  double reconstruction{0.0};
  double gradient{0.0};
  double proposal{0.0};
  double distortion{0.0};
};

// Mean over the batch of the weighted per-event sums.
inline double total_loss(const std::vector<LossTerms>& batch,
                         const LossWeights& lw) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  double acc = 0.0;
  for (const LossTerms& t : batch)
    acc += lw.alpha * t.reconstruction + lw.beta * t.gradient +
           lw.gamma * t.proposal + lw.eta * t.distortion;
  return acc / static_cast<double>(batch.size());
}

}  // namespace evrf
