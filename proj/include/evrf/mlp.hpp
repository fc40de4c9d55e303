#pragma once

// Minimal dense MLP with hand-coded reverse-mode backprop. Weights are
// plain doubles; activations are templated on the scalar so a forward and
// backward pass can run in Dual arithmetic (reverse-over-forward, used for
// parameter gradients of time-derivative objectives).
//
// Hidden layers use softplus; the output layer is linear — heads apply
// their own nonlinearity.

#include <cstdint>
#include <random>
#include <vector>

#include "evrf/math.hpp"

namespace evrf {

// Per-call activation storage, reusable across calls to avoid allocation.
template <class S>
struct MlpTape {
  std::vector<std::vector<S>> inputs;   // layer inputs (inputs[0] = x)
  std::vector<std::vector<S>> preacts;  // pre-activation values per layer
};

class Mlp {
 public:
  Mlp() = default;

  // dims = {in, hidden..., out}
  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    offsets_.clear();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(off);
      off += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    }
    weights_.assign(off, 0.0);
  }

  const std::vector<int>& dims() const { return dims_; }
  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t param_count() const { return weights_.size(); }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }

  // Uniform init in +-1/sqrt(fan_in) for both weights and biases.
  void init(std::mt19937_64& rng) {
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      std::uniform_real_distribution<double> uni(-bound, bound);
      double* w = weights_.data() + offsets_[l];
      const std::size_t n = static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
      for (std::size_t i = 0; i < n; ++i) w[i] = uni(rng);
    }
  }

  void zero_output_layer() {
    const std::size_t l = layer_count() - 1;
    double* w = weights_.data() + offsets_[l];
    const std::size_t n = static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    for (std::size_t i = 0; i < n; ++i) w[i] = 0.0;
  }

  // tape.inputs[l] is the input to layer l; tape.inputs[l+1] the softplus
  // activation of layer l (for hidden layers).
  template <class S>
  void forward(const std::vector<S>& x, MlpTape<S>& tape, std::vector<S>& out) const {
    const std::size_t layers = layer_count();
    tape.inputs.resize(layers + 1);
    tape.preacts.resize(layers);
    tape.inputs[0] = x;
    for (std::size_t l = 0; l < layers; ++l) {
      const int ni = dims_[l], no = dims_[l + 1];
      const double* w = weights_.data() + offsets_[l];
      const double* b = w + static_cast<std::size_t>(ni) * no;
      const std::vector<S>& cur = tape.inputs[l];
      std::vector<S>& pre = tape.preacts[l];
      pre.assign(no, S(0.0));
      for (int o = 0; o < no; ++o) {
        S acc = S(b[o]);
        const double* row = w + static_cast<std::size_t>(o) * ni;
        for (int i = 0; i < ni; ++i) acc += S(row[i]) * cur[i];
        pre[o] = acc;
      }
      if (l + 1 == layers) {
        out = pre;
      } else {
        std::vector<S>& act = tape.inputs[l + 1];
        act.assign(no, S(0.0));
        for (int o = 0; o < no; ++o) act[o] = softplus(pre[o]);
      }
    }
  }

  // Backprop: d_out is dL/d(output). Accumulates parameter gradients into
  // grad (same layout as weights()) and, if d_in != nullptr, writes
  // dL/d(input). Gradient accumulation uses grad_part so the same code
  // serves double and Dual passes.
  template <class S>
  void backward(const MlpTape<S>& tape, const std::vector<S>& d_out,
                std::vector<double>& grad, std::vector<S>* d_in) const {
    static thread_local std::vector<S> delta, delta_prev;
    delta = d_out;
    for (std::size_t li = layer_count(); li-- > 0;) {
      const int ni = dims_[li], no = dims_[li + 1];
      const double* w = weights_.data() + offsets_[li];
      double* gw = grad.data() + offsets_[li];
      double* gb = gw + static_cast<std::size_t>(ni) * no;
      const std::vector<S>& input = tape.inputs[li];
      // Through the activation of this layer's output (output layer linear).
      if (li + 1 < layer_count()) {
        for (int o = 0; o < no; ++o) delta[o] *= sigmoid(tape.preacts[li][o]);
      }
      for (int o = 0; o < no; ++o) {
        const S d = delta[o];
        double* grow = gw + static_cast<std::size_t>(o) * ni;
        for (int i = 0; i < ni; ++i) grow[i] += grad_part(d * input[i]);
        gb[o] += grad_part(d);
      }
      if (li == 0) {
        if (d_in) {
          d_in->assign(ni, S(0.0));
          for (int o = 0; o < no; ++o) {
            const S d = delta[o];
            const double* row = w + static_cast<std::size_t>(o) * ni;
            for (int i = 0; i < ni; ++i) (*d_in)[i] += S(row[i]) * d;
          }
        }
      } else {
        delta_prev.assign(ni, S(0.0));
        for (int o = 0; o < no; ++o) {
          const S d = delta[o];
          const double* row = w + static_cast<std::size_t>(o) * ni;
          for (int i = 0; i < ni; ++i) delta_prev[i] += S(row[i]) * d;
        }
        std::swap(delta, delta_prev);
      }
    }
  }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> weights_;
};

}  // namespace evrf
