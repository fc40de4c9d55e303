#pragma once

// Ray interval machinery: stratified coarse sampling, inverse-CDF histogram
// resampling, normalized s-distance, the overlap bound driving the proposal
// loss, the two-stage proposal -> vanilla sampling pipeline, and diagnostic
// PDFs for ray inspection.

#include <algorithm>
#include <random>
#include <stdexcept>
#include <vector>

#include "evrf/field.hpp"

namespace evrf {

struct RayBounds {
  double t_near{0.1};
  double t_far{10.0};

  void validate() const {
    if (!(0.0 < t_near && t_near < t_far))
      throw std::invalid_argument("ray bounds: need 0 < t_near < t_far");
  }
};

// A weight histogram along a ray: N intervals delimited by N+1 edges, in
// both metric t and normalized s coordinates.
struct WeightedIntervals {
  std::vector<double> t_edges;
  std::vector<double> s_edges;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }

  void validate() const {
    if (t_edges.size() != weights.size() + 1)
      throw std::invalid_argument("intervals: |edges| must be |weights| + 1");
    for (std::size_t i = 1; i < t_edges.size(); ++i)
      if (!(t_edges[i] > t_edges[i - 1]))
        throw std::invalid_argument("intervals: edges must be strictly increasing");
    for (double w : weights)
      if (!(w >= 0.0)) throw std::invalid_argument("intervals: weights must be >= 0");
  }
};

enum class SMode { kLinear, kInverse };

// s = (g(t) - g(t_n)) / (g(t_f) - g(t_n)), g = id for bounded scenes and
// g = 1/t for unbounded ones. Strictly increasing bijection onto [0,1].
inline double normalize_s(double t, const RayBounds& b, SMode mode) {
  if (t < b.t_near || t > b.t_far)
    throw std::out_of_range("normalize_s: t outside [t_near, t_far]");
  if (mode == SMode::kLinear) return (t - b.t_near) / (b.t_far - b.t_near);
  return (1.0 / b.t_near - 1.0 / t) / (1.0 / b.t_near - 1.0 / b.t_far);
}

// One uniform draw per equal-width stratum; ascending by construction.
inline std::vector<double> sample_stratified(const RayBounds& b, int n,
                                             std::mt19937_64& rng) {
  if (n < 2) throw std::invalid_argument("sample_stratified: n must be >= 2");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(n));
  const double width = (b.t_far - b.t_near) / n;
  for (int i = 0; i < n; ++i) t[i] = b.t_near + width * (i + uni(rng));
  return t;
}

// Inverse-CDF sampling of the piecewise-constant density proportional to the
// weights, stratified in CDF space. A uniform density floor of 1e-4 (mass per
// unit length, normalized by total span) keeps the support full. All-zero
// weights fall back to stratified sampling over the full span; the fallback
// is reported through used_fallback.
inline std::vector<double> resample_histogram(const WeightedIntervals& h, int n,
                                              std::mt19937_64& rng,
                                              bool* used_fallback = nullptr) {
  if (used_fallback) *used_fallback = false;
  if (n == 0) return {};
  h.validate();
  const std::size_t m = h.size();
  double total_w = 0.0;
  for (double w : h.weights) total_w += w;
  const double span = h.t_edges.back() - h.t_edges.front();
  if (total_w <= 0.0) {
    if (used_fallback) *used_fallback = true;
    RayBounds b{h.t_edges.front(), h.t_edges.back()};
    if (n == 1) {
      std::uniform_real_distribution<double> uni(b.t_near, b.t_far);
      return {uni(rng)};
    }
    return sample_stratified(b, n, rng);
  }

  std::vector<double> mass(m), cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double width = h.t_edges[i + 1] - h.t_edges[i];
    mass[i] = h.weights[i] + 1e-4 * width / span;
    cum[i + 1] = cum[i] + mass[i];
  }
  const double total = cum.back();

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n));
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double u = total * (k + uni(rng)) / n;  // stratified in CDF space
    while (seg + 1 < m && cum[seg + 1] <= u) ++seg;
    const double frac = (u - cum[seg]) / mass[seg];
    out[static_cast<std::size_t>(k)] =
        h.t_edges[seg] + frac * (h.t_edges[seg + 1] - h.t_edges[seg]);
  }
  return out;
}

// Sum of weights whose closed interval intersects [t0, t1]; any overlap
// counts the full weight, no proration. This makes the bound an upper
// envelope of the mass inside the query interval.
inline double bound(const WeightedIntervals& h, double t0, double t1) {
  if (!(t0 <= t1)) throw std::invalid_argument("bound: query interval reversed");
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h.t_edges[i] <= t1 && h.t_edges[i + 1] >= t0) acc += h.weights[i];
  return acc;
}

// Quadrature weights w_i = T_i (1 - exp(-sigma_i delta_i)) with
// T_i = exp(-sum_{l<i} sigma_l delta_l). Telescoping gives
// sum w = 1 - exp(-sum sigma delta) <= 1.
template <class S>
void compute_weights(const std::vector<S>& sigma, const std::vector<S>& delta,
                     std::vector<S>& w) {
  const std::size_t n = sigma.size();
  w.assign(n, S(0.0));
  S optical_depth = S(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const S alpha = S(1.0) - exp(S(-1.0) * sigma[i] * delta[i]);
    w[i] = exp(S(-1.0) * optical_depth) * alpha;
    optical_depth += sigma[i] * delta[i];
  }
}

struct TwoPhaseSamples {
  std::vector<WeightedIntervals> proposal;   // weight histogram per stage
  std::vector<std::vector<double>> stage_t;  // sample distances per stage
  std::vector<double> vanilla_t;             // ceil(n_prop / 2) sorted distances
  bool resample_fallback{false};
};

// Stage 0 draws stratified samples; every stage evaluates the proposal
// density at its samples, turns them into quadrature weights, and the next
// stage resamples that histogram. The vanilla pass gets half the samples.
// Each sample owns the cell between the midpoints to its neighbours, with
// the outer cells clamped to [t_near, t_far]: the histogram spans the full
// ray segment, so repeated resampling cannot shrink the support.
inline TwoPhaseSamples two_phase_sample(const ProposalField& field,
                                        const Vec3d& origin, const Vec3d& dir,
                                        const RayBounds& bounds, int n_prop,
                                        int n_stages, WarpMode warp_mode,
                                        std::uint64_t seed) {
  if (n_prop < 4) throw std::invalid_argument("two_phase_sample: n_prop must be >= 4");
  if (n_stages < 1) throw std::invalid_argument("two_phase_sample: n_stages must be >= 1");
  bounds.validate();
  std::mt19937_64 rng(seed);

  TwoPhaseSamples out;
  std::vector<double> t = sample_stratified(bounds, n_prop, rng);
  std::vector<double> sigma(t.size()), delta(t.size());
  for (int stage = 0; stage < n_stages; ++stage) {
    for (std::size_t i = 0; i < t.size(); ++i)
      sigma[i] = field.density(warp(origin + t[i] * dir, warp_mode));

    WeightedIntervals h;
    h.t_edges.resize(t.size() + 1);
    h.t_edges.front() = bounds.t_near;
    h.t_edges.back() = bounds.t_far;
    for (std::size_t i = 1; i < t.size(); ++i)
      h.t_edges[i] = 0.5 * (t[i - 1] + t[i]);
    for (std::size_t i = 0; i < t.size(); ++i)
      delta[i] = h.t_edges[i + 1] - h.t_edges[i];
    h.s_edges.resize(h.t_edges.size());
    for (std::size_t i = 0; i < h.t_edges.size(); ++i)
      h.s_edges[i] = normalize_s(h.t_edges[i], bounds, SMode::kLinear);
    compute_weights(sigma, delta, h.weights);
    out.proposal.push_back(std::move(h));
    out.stage_t.push_back(t);

    const bool last = stage + 1 == n_stages;
    const int n_next = last ? (n_prop + 1) / 2 : n_prop;
    bool fb = false;
    t = resample_histogram(out.proposal.back(), n_next, rng, &fb);
    out.resample_fallback = out.resample_fallback || fb;
    sigma.resize(t.size());
    delta.resize(t.size());
  }
  out.vanilla_t = std::move(t);
  return out;
}

enum class DiagnosticMode { kBinarized, kField };

struct DiagnosticPdf {
  std::vector<double> pdf;
  std::vector<double> transmittance;
  bool degenerate{false};
};

// Ray-inspection PDFs over equally spaced density samples. Binarized mode
// thresholds the density and normalizes the indicator; field mode uses
// p_i = sigma_i exp(-sigma_i dt) with the running transmittance.
inline DiagnosticPdf diagnostic_pdf(const std::vector<double>& sigma, double dt,
                                    DiagnosticMode mode, double tau) {
  if (sigma.empty()) throw std::invalid_argument("diagnostic_pdf: empty samples");
  const std::size_t n = sigma.size();
  DiagnosticPdf out;
  out.pdf.assign(n, 0.0);
  out.transmittance.assign(n, 1.0);
  if (mode == DiagnosticMode::kBinarized) {
    int count = 0;
    for (double s : sigma) count += s > tau ? 1 : 0;
    if (count == 0) {
      out.degenerate = true;
      return out;
    }
    double absorbed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out.transmittance[i] = 1.0 - absorbed;
      out.pdf[i] = sigma[i] > tau ? 1.0 / count : 0.0;
      absorbed += out.pdf[i];
    }
  } else {
    double optical_depth = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out.transmittance[i] = std::exp(-optical_depth);
      out.pdf[i] = sigma[i] * std::exp(-sigma[i] * dt);
      optical_depth += sigma[i] * dt;
    }
  }
  return out;
}

}  // namespace evrf
