#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ted4/common.hpp"

namespace ted4 {

/// Fully connected network with tanh hidden layers and a linear head.
///
/// Parameters live in one flat vector, layer by layer: row-major weights
/// (out x in) followed by the bias (absent when the net is bias-free). The
/// same layout is used for gradients, optimizer moments, and the fp32 weight
/// blob in the container.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, bool bias = true) : widths_(std::move(widths)), bias_(bias) {
    require(widths_.size() >= 2, "an MLP needs at least input and output widths");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      n += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + (bias_ ? widths_[l + 1] : 0);
    }
    params_.assign(n, 0.0);
  }

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
  const std::vector<int>& widths() const { return widths_; }
  bool has_bias() const { return bias_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) init; the last layer is scaled by `head_scale`.
  void init(Rng& rng, double head_scale = 1.0) {
    std::size_t at = 0;
    for (int l = 0; l < layer_count(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      const double scale = (l + 1 == layer_count()) ? head_scale : 1.0;
      for (int i = 0; i < in * out; ++i) params_[at++] = scale * rng.uniform(-bound, bound);
      if (bias_) at += out;  // biases start at zero
    }
  }

  void set_identity() {
    require(layer_count() == 1 && in_dim() == out_dim(), "identity init needs one square layer");
    std::fill(params_.begin(), params_.end(), 0.0);
    for (int i = 0; i < in_dim(); ++i) params_[static_cast<std::size_t>(i) * in_dim() + i] = 1.0;
  }

  void round_to_float() {
    for (double& p : params_) p = round_float(p);
  }

  /// Activations of every layer for one forward pass; `layers[0]` is the input.
  struct Cache {
    std::vector<std::vector<double>> layers;
    std::span<const double> output() const { return layers.back(); }
  };

  std::vector<double> forward(std::span<const double> input) const {
    Cache cache;
    forward(input, cache);
    return std::move(cache.layers.back());
  }

  void forward(std::span<const double> input, Cache& cache) const {
    require(static_cast<int>(input.size()) == in_dim(),
            "MLP input has dimension " + std::to_string(input.size()) + ", expected " + std::to_string(in_dim()));
    cache.layers.resize(widths_.size());
    cache.layers[0].assign(input.begin(), input.end());
    std::size_t at = 0;
    for (int l = 0; l < layer_count(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double* w = params_.data() + at;
      const double* b = bias_ ? w + static_cast<std::size_t>(in) * out : nullptr;
      const std::vector<double>& x = cache.layers[l];
      std::vector<double>& y = cache.layers[l + 1];
      y.assign(out, 0.0);
      for (int o = 0; o < out; ++o) {
        double acc = b ? b[o] : 0.0;
        const double* row = w + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = (l + 1 < layer_count()) ? std::tanh(acc) : acc;
      }
      at += static_cast<std::size_t>(in) * out + (bias_ ? out : 0);
    }
  }

  /// Accumulates dL/dparams into `grad` (same layout as params) and returns dL/dinput.
  std::vector<double> backward(const Cache& cache, std::span<const double> grad_out, std::span<double> grad) const {
    std::vector<std::size_t> offsets(layer_count());
    std::size_t at = 0;
    for (int l = 0; l < layer_count(); ++l) {
      offsets[l] = at;
      at += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + (bias_ ? widths_[l + 1] : 0);
    }
    std::vector<double> delta(grad_out.begin(), grad_out.end());
    for (int l = layer_count() - 1; l >= 0; --l) {
      const int in = widths_[l], out = widths_[l + 1];
      if (l + 1 < layer_count()) {
        const std::vector<double>& y = cache.layers[l + 1];
        for (int o = 0; o < out; ++o) delta[o] *= 1.0 - y[o] * y[o];
      }
      const double* w = params_.data() + offsets[l];
      double* gw = grad.data() + offsets[l];
      const std::vector<double>& x = cache.layers[l];
      std::vector<double> delta_in(in, 0.0);
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = w + static_cast<std::size_t>(o) * in;
        double* grow = gw + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          grow[i] += d * x[i];
          delta_in[i] += d * row[i];
        }
        if (bias_) gw[static_cast<std::size_t>(in) * out + o] += d;
      }
      delta = std::move(delta_in);
    }
    return delta;
  }

 private:
  std::vector<int> widths_;
  bool bias_ = true;
  std::vector<double> params_;
};

}  // namespace ted4
