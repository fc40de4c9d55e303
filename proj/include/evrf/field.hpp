#pragma once

// The learnable radiance fields: sinusoidal positional encoding, space
// warping (identity / contraction-into-ball / forward-facing NDC), the
// density+radiance vanilla field and the density-only proposal field.

#include <string>
#include <vector>

#include "evrf/mlp.hpp"

namespace evrf {

// ---------------------------------------------------------------------------
// Positional encoding: [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin/cos(2^{L-1} pi x)].
// ---------------------------------------------------------------------------
struct EncodingConfig {
  int n_freq_position{10};
  int n_freq_direction{4};

  void validate() const {
    if (n_freq_position < 1 || n_freq_direction < 1)
      throw std::invalid_argument("encoding: frequency counts must be >= 1");
  }
};

inline int encoded_dim(int n_freq) { return 3 + 6 * n_freq; }

template <class S>
void encode(const Vec3<S>& x, int n_freq, std::vector<S>& out) {
  out.resize(static_cast<std::size_t>(encoded_dim(n_freq)));
  out[0] = x.x; out[1] = x.y; out[2] = x.z;
  std::size_t k = 3;
  double scale = M_PI;
  for (int l = 0; l < n_freq; ++l) {
    for (int a = 0; a < 3; ++a) out[k++] = sin(S(scale) * x[a]);
    for (int a = 0; a < 3; ++a) out[k++] = cos(S(scale) * x[a]);
    scale *= 2.0;
  }
}

template <class S>
void encode_backward(const Vec3<S>& x, int n_freq, const std::vector<S>& d_out,
                     Vec3<S>& d_x) {
  for (int a = 0; a < 3; ++a) d_x[a] += d_out[a];
  std::size_t k = 3;
  double scale = M_PI;
  for (int l = 0; l < n_freq; ++l) {
    for (int a = 0; a < 3; ++a) d_x[a] += S(scale) * cos(S(scale) * x[a]) * d_out[k++];
    for (int a = 0; a < 3; ++a) d_x[a] -= S(scale) * sin(S(scale) * x[a]) * d_out[k++];
    scale *= 2.0;
  }
}

// ---------------------------------------------------------------------------
// Space warping.
// ---------------------------------------------------------------------------
enum class WarpMode { kIdentity, kContract, kNdc };

inline WarpMode warp_mode_from_string(const std::string& s) {
  if (s == "identity") return WarpMode::kIdentity;
  if (s == "contract") return WarpMode::kContract;
  if (s == "ndc") return WarpMode::kNdc;
  throw std::invalid_argument("unknown warp mode: " + s);
}

// Contraction into the open ball of radius 2: identity inside the unit
// ball, (2 - 1/r) x/r outside.
template <class S>
Vec3<S> warp_contract(const Vec3<S>& x) {
  const S r2 = squared_norm(x);
  if (value_of(r2) <= 1.0) return x;
  const S r = sqrt(r2);
  const S f = S(2.0) / r - S(1.0) / r2;
  return f * x;
}

template <class S>
void warp_contract_backward(const Vec3<S>& x, const Vec3<S>& d_y, Vec3<S>& d_x) {
  const S r2 = squared_norm(x);
  if (value_of(r2) <= 1.0) {
    d_x += d_y;
    return;
  }
  const S r = sqrt(r2);
  const S f = S(2.0) / r - S(1.0) / r2;
  // d(f)/dr = -2/r^2 + 2/r^3; dr/dx = x/r.
  const S df = (S(-2.0) / r2 + S(2.0) / (r2 * r)) / r;
  const S proj = dot(d_y, x);
  d_x += f * d_y + (df * proj) * x;
}

// Forward-facing NDC with unit focal lengths and near plane 1; input is in
// camera coordinates with the camera looking along -z (so z < 0).
template <class S>
Vec3<S> warp_ndc(const Vec3<S>& x) {
  if (value_of(x.z) >= 0.0)
    throw std::domain_error("ndc warp: point must have z < 0 in camera coordinates");
  const S inv = S(-1.0) / x.z;
  return {x.x * inv, x.y * inv, S(1.0) + S(2.0) / x.z};
}

template <class S>
Vec3<S> warp(const Vec3<S>& x, WarpMode mode) {
  switch (mode) {
    case WarpMode::kIdentity: return x;
    case WarpMode::kContract: return warp_contract(x);
    case WarpMode::kNdc: return warp_ndc(x);
  }
  return x;
}

template <class S>
void warp_backward(const Vec3<S>& x, WarpMode mode, const Vec3<S>& d_y, Vec3<S>& d_x) {
  switch (mode) {
    case WarpMode::kIdentity:
      d_x += d_y;
      return;
    case WarpMode::kContract:
      warp_contract_backward(x, d_y, d_x);
      return;
    case WarpMode::kNdc: {
      const S inv = S(-1.0) / x.z;
      d_x.x += inv * d_y.x;
      d_x.y += inv * d_y.y;
      d_x.z += (x.x * inv * inv) * d_y.x + (x.y * inv * inv) * d_y.y -
               (S(2.0) * inv * inv) * d_y.z;
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Fields.
// ---------------------------------------------------------------------------
struct FieldConfig {
  int vanilla_depth{4};
  int vanilla_width{128};
  int proposal_depth{2};
  int proposal_width{64};
  EncodingConfig encoding;
  double radiance_floor{1e-3};  // epsilon added to the positive radiance head
};

template <class S>
struct VanillaEval {
  MlpTape<S> trunk_tape, sigma_tape, color_tape;
  std::vector<S> enc_x, enc_d, trunk_raw, feat, color_in, sigma_raw, color_raw;
  S sigma{};
  Vec3<S> color{};  // includes the radiance floor
  Vec3<S> x, dir;   // warped position and unit direction, as evaluated
};

template <class S>
struct ProposalEval {
  MlpTape<S> trunk_tape, sigma_tape;
  std::vector<S> enc_x, trunk_raw, feat, sigma_raw;
  S sigma{};
  Vec3<S> x;
};

struct VanillaGrads {
  std::vector<double> trunk, sigma, color;
};
struct ProposalGrads {
  std::vector<double> trunk, sigma;
};

class VanillaField {
 public:
  VanillaField() = default;
  explicit VanillaField(const FieldConfig& cfg)
      : cfg_(cfg),
        trunk_(make_dims(encoded_dim(cfg.encoding.n_freq_position),
                         cfg.vanilla_width, cfg.vanilla_depth)),
        sigma_head_({cfg.vanilla_width, 1}),
        color_head_({cfg.vanilla_width + encoded_dim(cfg.encoding.n_freq_direction),
                     cfg.vanilla_width, 3}) {}

  void init(std::mt19937_64& rng) {
    trunk_.init(rng);
    sigma_head_.init(rng);
    color_head_.init(rng);
  }

  const FieldConfig& config() const { return cfg_; }
  Mlp& trunk() { return trunk_; }
  Mlp& sigma_head() { return sigma_head_; }
  Mlp& color_head() { return color_head_; }
  const Mlp& trunk() const { return trunk_; }
  const Mlp& sigma_head() const { return sigma_head_; }
  const Mlp& color_head() const { return color_head_; }

  std::size_t param_count() const {
    return trunk_.param_count() + sigma_head_.param_count() + color_head_.param_count();
  }

  VanillaGrads make_grads() const {
    return {std::vector<double>(trunk_.param_count(), 0.0),
            std::vector<double>(sigma_head_.param_count(), 0.0),
            std::vector<double>(color_head_.param_count(), 0.0)};
  }

  // x is the warped sample position; d the unit view direction.
  template <class S>
  void eval(const Vec3<S>& x, const Vec3<S>& d, VanillaEval<S>& ev) const {
    ev.x = x;
    ev.dir = d;
    encode(x, cfg_.encoding.n_freq_position, ev.enc_x);
    encode(d, cfg_.encoding.n_freq_direction, ev.enc_d);
    trunk_.forward(ev.enc_x, ev.trunk_tape, ev.trunk_raw);
    ev.feat.resize(ev.trunk_raw.size());
    for (std::size_t i = 0; i < ev.trunk_raw.size(); ++i)
      ev.feat[i] = softplus(ev.trunk_raw[i]);
    sigma_head_.forward(ev.feat, ev.sigma_tape, ev.sigma_raw);
    ev.sigma = softplus(ev.sigma_raw[0]);
    ev.color_in.resize(ev.feat.size() + ev.enc_d.size());
    std::copy(ev.feat.begin(), ev.feat.end(), ev.color_in.begin());
    std::copy(ev.enc_d.begin(), ev.enc_d.end(), ev.color_in.begin() + ev.feat.size());
    color_head_.forward(ev.color_in, ev.color_tape, ev.color_raw);
    for (int c = 0; c < 3; ++c)
      ev.color[c] = softplus(ev.color_raw[c]) + S(cfg_.radiance_floor);
  }

  // d_sigma / d_color are dL/d(sigma), dL/d(color). Adjoints for the warped
  // position and direction are accumulated into d_x / d_dir when non-null.
  template <class S>
  void backward(const VanillaEval<S>& ev, S d_sigma, const Vec3<S>& d_color,
                VanillaGrads& grads, Vec3<S>* d_x, Vec3<S>* d_dir) const {
    static thread_local std::vector<S> d_color_raw, d_color_in, d_sigma_raw,
        d_feat, d_trunk_raw, d_enc_x;
    d_color_raw.assign(3, S(0.0));
    for (int c = 0; c < 3; ++c)
      d_color_raw[c] = d_color[c] * sigmoid(ev.color_raw[c]);
    color_head_.backward(ev.color_tape, d_color_raw, grads.color, &d_color_in);

    d_sigma_raw.assign(1, d_sigma * sigmoid(ev.sigma_raw[0]));
    sigma_head_.backward(ev.sigma_tape, d_sigma_raw, grads.sigma, &d_feat);

    const std::size_t nf = ev.feat.size();
    for (std::size_t i = 0; i < nf; ++i) d_feat[i] += d_color_in[i];
    d_trunk_raw.assign(nf, S(0.0));
    for (std::size_t i = 0; i < nf; ++i)
      d_trunk_raw[i] = d_feat[i] * sigmoid(ev.trunk_raw[i]);
    trunk_.backward(ev.trunk_tape, d_trunk_raw, grads.trunk,
                    d_x ? &d_enc_x : nullptr);
    if (d_x) encode_backward(ev.x, cfg_.encoding.n_freq_position, d_enc_x, *d_x);
    if (d_dir) {
      static thread_local std::vector<S> d_enc_d;
      d_enc_d.assign(ev.enc_d.size(), S(0.0));
      for (std::size_t i = 0; i < ev.enc_d.size(); ++i)
        d_enc_d[i] = d_color_in[nf + i];
      encode_backward(ev.dir, cfg_.encoding.n_freq_direction, d_enc_d, *d_dir);
    }
  }

 private:
  static std::vector<int> make_dims(int in, int width, int depth) {
    std::vector<int> dims{in};
    for (int i = 0; i < depth; ++i) dims.push_back(width);
    return dims;
  }

  FieldConfig cfg_;
  Mlp trunk_, sigma_head_, color_head_;
};

class ProposalField {
 public:
  ProposalField() = default;
  explicit ProposalField(const FieldConfig& cfg)
      : cfg_(cfg),
        trunk_(make_dims(encoded_dim(cfg.encoding.n_freq_position),
                         cfg.proposal_width, cfg.proposal_depth)),
        sigma_head_({cfg.proposal_width, 1}) {}

  void init(std::mt19937_64& rng) {
    trunk_.init(rng);
    sigma_head_.init(rng);
  }

  Mlp& trunk() { return trunk_; }
  Mlp& sigma_head() { return sigma_head_; }
  const Mlp& trunk() const { return trunk_; }
  const Mlp& sigma_head() const { return sigma_head_; }

  std::size_t param_count() const {
    return trunk_.param_count() + sigma_head_.param_count();
  }

  ProposalGrads make_grads() const {
    return {std::vector<double>(trunk_.param_count(), 0.0),
            std::vector<double>(sigma_head_.param_count(), 0.0)};
  }

  template <class S>
  void eval(const Vec3<S>& x, ProposalEval<S>& ev) const {
    ev.x = x;
    encode(x, cfg_.encoding.n_freq_position, ev.enc_x);
    trunk_.forward(ev.enc_x, ev.trunk_tape, ev.trunk_raw);
    ev.feat.resize(ev.trunk_raw.size());
    for (std::size_t i = 0; i < ev.trunk_raw.size(); ++i)
      ev.feat[i] = softplus(ev.trunk_raw[i]);
    sigma_head_.forward(ev.feat, ev.sigma_tape, ev.sigma_raw);
    ev.sigma = softplus(ev.sigma_raw[0]);
  }

  // Density-only query without tape bookkeeping overhead sharing.
  double density(Vec3d x) const {
    thread_local ProposalEval<double> ev;
    eval(x, ev);
    return ev.sigma;
  }

  template <class S>
  void backward(const ProposalEval<S>& ev, S d_sigma, ProposalGrads& grads,
                Vec3<S>* d_x) const {
    static thread_local std::vector<S> d_sigma_raw, d_feat, d_trunk_raw, d_enc_x;
    d_sigma_raw.assign(1, d_sigma * sigmoid(ev.sigma_raw[0]));
    sigma_head_.backward(ev.sigma_tape, d_sigma_raw, grads.sigma, &d_feat);
    d_trunk_raw.assign(ev.feat.size(), S(0.0));
    for (std::size_t i = 0; i < ev.feat.size(); ++i)
      d_trunk_raw[i] = d_feat[i] * sigmoid(ev.trunk_raw[i]);
    trunk_.backward(ev.trunk_tape, d_trunk_raw, grads.trunk,
                    d_x ? &d_enc_x : nullptr);
    if (d_x) encode_backward(ev.x, cfg_.encoding.n_freq_position, d_enc_x, *d_x);
  }

 private:
  static std::vector<int> make_dims(int in, int width, int depth) {
    std::vector<int> dims{in};
    for (int i = 0; i < depth; ++i) dims.push_back(width);
    return dims;
  }

  FieldConfig cfg_;
  Mlp trunk_, sigma_head_;
};

}  // namespace evrf
