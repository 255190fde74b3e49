/*
 * Copyright 2026 The bdpgan Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Dense feed-forward networks with exact per-example backpropagation.
//
// Two gradient paths exist on purpose: `ExampleBackprop` works one example
// at a time (what the privacy mechanism clips), `forward_cached`/`backward`
// work on whole batches (plain training, generator updates). They share only
// the activation and loss definitions.

#ifndef BDPGAN_NN_HPP_
#define BDPGAN_NN_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bdpgan/error.hpp"
#include "bdpgan/rng.hpp"
#include "bdpgan/tensor.hpp"

namespace bdpgan {

enum class Activation : std::uint8_t {
  kIdentity = 0,
  kSelu = 1,
  kTanh = 2,
  kRelu = 3,
};

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluScale = 1.0507009873554805;

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kSelu: return "selu";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "selu") return Activation::kSelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kSelu:
      return z > 0.0 ? kSeluScale * z : kSeluScale * kSeluAlpha * std::expm1(z);
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

// Derivative in terms of the pre-activation z and the output y = f(z).
inline double activation_slope(Activation a, double z, double y) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kSelu:
      return z > 0.0 ? kSeluScale : y + kSeluScale * kSeluAlpha;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

enum class Loss {
  kSoftmaxCrossEntropy,
  kWassersteinCriticReal,  // -D(x)
  kWassersteinCriticFake,  // +D(x)
  kWassersteinGenerator,   // -D(G(z)), seen from the critic output
  kMse,                    // mean over outputs of (y - t)^2
};

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// Per-example loss and its gradient with respect to the network output.
// `label` is empty for the Wasserstein losses, one class id for softmax
// cross-entropy, and a target vector for mse.
inline double loss_and_output_grad(Loss loss, std::span<const double> out,
                                   std::span<const double> label,
                                   std::span<double> grad) {
  switch (loss) {
    case Loss::kSoftmaxCrossEntropy: {
      const auto cls = static_cast<std::size_t>(label[0]);
      const double mx = *std::max_element(out.begin(), out.end());
      double z = 0.0;
      for (double v : out) z += std::exp(v - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < out.size(); ++k) {
        grad[k] = std::exp(out[k] - lse) - (k == cls ? 1.0 : 0.0);
      }
      return lse - out[cls];
    }
    case Loss::kWassersteinCriticReal:
    case Loss::kWassersteinGenerator:
      std::fill(grad.begin(), grad.end(), -1.0);
      return -out[0];
    case Loss::kWassersteinCriticFake:
      std::fill(grad.begin(), grad.end(), 1.0);
      return out[0];
    case Loss::kMse: {
      const double n = static_cast<double>(out.size());
      double s = 0.0;
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double r = out[k] - label[k];
        s += r * r;
        grad[k] = 2.0 * r / n;
      }
      return s / n;
    }
  }
  return 0.0;
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kIdentity;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  std::size_t parameter_count() const { return out * in + out; }
};

class Network {
 public:
  Network() = default;

  explicit Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DimensionError("network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.in == 0 || L.out == 0) {
        throw DimensionError("layer " + std::to_string(l) + " has a zero dimension");
      }
      if (L.weights.size() != L.in * L.out || L.bias.size() != L.out) {
        throw DimensionError("layer " + std::to_string(l) +
                             " parameter storage does not match its shape");
      }
      if (l > 0 && layers_[l - 1].out != L.in) {
        throw DimensionError("layer " + std::to_string(l) + " expects " +
                             std::to_string(L.in) + " inputs but layer " +
                             std::to_string(l - 1) + " produces " +
                             std::to_string(layers_[l - 1].out));
      }
    }
  }

  // sizes = {input, hidden..., output}. LeCun-normal weights, zero biases.
  static Network dense(std::span<const std::size_t> sizes, Activation hidden,
                       Activation output, Rng& rng) {
    if (sizes.size() < 2) throw ConfigError("network needs input and output sizes");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      DenseLayer L;
      L.in = sizes[l];
      L.out = sizes[l + 1];
      L.activation = (l + 2 == sizes.size()) ? output : hidden;
      const double scale = (L.activation == Activation::kRelu ? std::sqrt(2.0) : 1.0) /
                           std::sqrt(static_cast<double>(L.in));
      L.weights.resize(L.in * L.out);
      for (double& w : L.weights) w = scale * rng.normal();
      L.bias.assign(L.out, 0.0);
      layers.push_back(std::move(L));
    }
    return Network(std::move(layers));
  }

  static Network dense(std::initializer_list<std::size_t> sizes, Activation hidden,
                       Activation output, Rng& rng) {
    std::vector<std::size_t> v(sizes);
    return dense(std::span<const std::size_t>(v), hidden, output, rng);
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& L : layers_) n += L.parameter_count();
    return n;
  }

  std::size_t widest_layer() const {
    std::size_t w = input_dim();
    for (const auto& L : layers_) w = std::max(w, L.out);
    return w;
  }

  // Flat layout: for each layer, weights (row-major) then bias.
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& L : layers_) {
      p.insert(p.end(), L.weights.begin(), L.weights.end());
      p.insert(p.end(), L.bias.begin(), L.bias.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) {
      throw DimensionError("parameter vector has length " + std::to_string(p.size()) +
                           ", network has " + std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    for (auto& L : layers_) {
      std::copy_n(p.begin() + off, L.weights.size(), L.weights.begin());
      off += L.weights.size();
      std::copy_n(p.begin() + off, L.bias.size(), L.bias.begin());
      off += L.bias.size();
    }
  }

  // Calls f(span<double>) on each contiguous parameter block in flat order.
  template <typename F>
  void for_each_block(F&& f) {
    for (auto& L : layers_) {
      f(std::span<double>(L.weights));
      f(std::span<double>(L.bias));
    }
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      const auto& x = a.layers_[l];
      const auto& y = b.layers_[l];
      if (x.in != y.in || x.out != y.out || x.activation != y.activation ||
          x.weights != y.weights || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
};

inline void check_input_width(const Network& net, std::size_t width) {
  if (width != net.input_dim()) {
    throw DimensionError("layer 0 expects input width " +
                         std::to_string(net.input_dim()) + ", got " +
                         std::to_string(width));
  }
}

inline void check_labels(const Network& net, const Tensor& batch, const Tensor& labels,
                         Loss loss) {
  const std::size_t n = batch.rows();
  switch (loss) {
    case Loss::kSoftmaxCrossEntropy:
      if (labels.rows() != n || labels.row_size() != 1) {
        throw DimensionError("softmax cross-entropy needs one class id per example");
      }
      for (double v : labels.data()) {
        if (v < 0.0 || v >= static_cast<double>(net.output_dim()) || v != std::floor(v)) {
          throw DimensionError("class id " + std::to_string(v) + " outside [0, " +
                               std::to_string(net.output_dim()) + ")");
        }
      }
      break;
    case Loss::kMse:
      if (labels.rows() != n || labels.row_size() != net.output_dim()) {
        throw DimensionError("mse needs one target row of width " +
                             std::to_string(net.output_dim()) + " per example");
      }
      break;
    default:
      if (net.output_dim() != 1) {
        throw DimensionError("Wasserstein losses need a scalar critic output");
      }
      break;
  }
}

inline std::span<const double> label_row(const Tensor& labels, std::size_t i) {
  if (labels.rows() == 0) return {};
  return labels.row(i);
}

// Batch forward pass. Rows of `batch` are examples; trailing dims are flattened.
inline Tensor forward(const Network& net, const Tensor& batch) {
  const std::size_t n = batch.rows();
  check_input_width(net, batch.row_size());
  std::vector<double> cur(batch.data());
  std::vector<double> next;
  std::size_t width = net.input_dim();
  for (const auto& L : net.layers()) {
    next.assign(n * L.out, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* a = cur.data() + i * width;
      double* z = next.data() + i * L.out;
      for (std::size_t o = 0; o < L.out; ++o) {
        z[o] = activate(L.activation,
                        detail::dot(L.weights.data() + o * L.in, a, L.in) + L.bias[o]);
      }
    }
    cur.swap(next);
    width = L.out;
  }
  Tensor out({n, width}, std::move(cur));
  out.require_finite("forward output");
  return out;
}

// Single-example backpropagation with reusable buffers.
class ExampleBackprop {
 public:
  explicit ExampleBackprop(const Network& net) : net_(&net) {
    const auto& layers = net.layers();
    pre_.resize(layers.size());
    post_.resize(layers.size() + 1);
    post_[0].resize(net.input_dim());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      pre_[l].resize(layers[l].out);
      post_[l + 1].resize(layers[l].out);
    }
    delta_.resize(net.widest_layer());
    delta_prev_.resize(net.widest_layer());
  }

  std::span<const double> forward(std::span<const double> x) {
    const auto& layers = net_->layers();
    std::copy(x.begin(), x.end(), post_[0].begin());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const double* a = post_[l].data();
      for (std::size_t o = 0; o < L.out; ++o) {
        const double z = detail::dot(L.weights.data() + o * L.in, a, L.in) + L.bias[o];
        pre_[l][o] = z;
        post_[l + 1][o] = activate(L.activation, z);
      }
    }
    return post_.back();
  }

  // Writes d loss / d params into `grad` (overwritten) and, when non-empty,
  // d loss / d input into `input_grad`. Returns the example loss.
  double gradient(std::span<const double> x, std::span<const double> label, Loss loss,
                  std::span<double> grad, std::span<double> input_grad = {}) {
    forward(x);
    const auto& out = post_.back();
    double value = loss_and_output_grad(loss, out, label,
                                        std::span<double>(delta_.data(), out.size()));
    backward_from_delta(grad, input_grad);
    return value;
  }

  // Backprop an arbitrary upstream gradient d loss / d output.
  void gradient_from_output(std::span<const double> x, std::span<const double> out_grad,
                            std::span<double> grad, std::span<double> input_grad = {}) {
    forward(x);
    std::copy(out_grad.begin(), out_grad.end(), delta_.begin());
    backward_from_delta(grad, input_grad);
  }

 private:
  void backward_from_delta(std::span<double> grad, std::span<double> input_grad) {
    const auto& layers = net_->layers();
    // grad offsets per layer
    std::size_t off = net_->parameter_count();
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& L = layers[l];
      off -= L.parameter_count();
      for (std::size_t o = 0; o < L.out; ++o) {
        delta_[o] *= activation_slope(L.activation, pre_[l][o], post_[l + 1][o]);
      }
      const double* a = post_[l].data();
      double* gw = grad.data() + off;
      double* gb = gw + L.in * L.out;
      for (std::size_t o = 0; o < L.out; ++o) {
        const double d = delta_[o];
        double* row = gw + o * L.in;
        for (std::size_t j = 0; j < L.in; ++j) row[j] = d * a[j];
        gb[o] = d;
      }
      if (l > 0 || !input_grad.empty()) {
        std::fill_n(delta_prev_.begin(), L.in, 0.0);
        for (std::size_t o = 0; o < L.out; ++o) {
          detail::axpy(delta_[o], L.weights.data() + o * L.in, delta_prev_.data(), L.in);
        }
        std::copy_n(delta_prev_.begin(), L.in, delta_.begin());
      }
    }
    if (!input_grad.empty()) {
      std::copy_n(delta_.begin(), net_->input_dim(), input_grad.begin());
    }
  }

  const Network* net_;
  std::vector<std::vector<double>> pre_;
  std::vector<std::vector<double>> post_;
  std::vector<double> delta_;
  std::vector<double> delta_prev_;
};

// One flat gradient per example.
inline std::vector<Tensor> per_example_gradients(const Network& net, const Tensor& batch,
                                                 const Tensor& labels, Loss loss) {
  if (batch.rows() == 0) throw DimensionError("per-example gradients need a nonempty batch");
  check_input_width(net, batch.row_size());
  check_labels(net, batch, labels, loss);
  ExampleBackprop bp(net);
  std::vector<Tensor> grads;
  grads.reserve(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    Tensor g({net.parameter_count()});
    const double value = bp.gradient(batch.row(i), label_row(labels, i), loss, g.data());
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at example " + std::to_string(i));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---- Batched path ----------------------------------------------------------

struct ForwardCache {
  std::vector<Tensor> pre;   // per layer, n x out
  std::vector<Tensor> post;  // post[0] = input, post[l+1] = layer l output
  const Tensor& output() const { return post.back(); }
};

inline ForwardCache forward_cached(const Network& net, const Tensor& batch) {
  const std::size_t n = batch.rows();
  check_input_width(net, batch.row_size());
  ForwardCache c;
  c.post.push_back(batch.reshaped({n, batch.row_size()}));
  for (const auto& L : net.layers()) {
    Tensor pre({n, L.out});
    Tensor post({n, L.out});
    const Tensor& a = c.post.back();
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a.row(i).data();
      for (std::size_t o = 0; o < L.out; ++o) {
        const double z = detail::dot(L.weights.data() + o * L.in, ai, L.in) + L.bias[o];
        pre.at(i, o) = z;
        post.at(i, o) = activate(L.activation, z);
      }
    }
    c.pre.push_back(std::move(pre));
    c.post.push_back(std::move(post));
  }
  return c;
}

struct BackwardResult {
  std::vector<double> param_grad;  // summed over rows of output_grad
  Tensor input_grad;               // n x input_dim, empty unless requested
};

inline BackwardResult backward(const Network& net, const ForwardCache& cache,
                               const Tensor& output_grad, bool want_input_grad = false) {
  const auto& layers = net.layers();
  const std::size_t n = output_grad.rows();
  BackwardResult r;
  r.param_grad.assign(net.parameter_count(), 0.0);
  Tensor delta = output_grad.reshaped({n, net.output_dim()});
  std::size_t off = net.parameter_count();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    off -= L.parameter_count();
    const Tensor& pre = cache.pre[l];
    const Tensor& post = cache.post[l + 1];
    for (std::size_t k = 0; k < delta.size(); ++k) {
      delta[k] *= activation_slope(L.activation, pre[k], post[k]);
    }
    const Tensor& a = cache.post[l];
    double* gw = r.param_grad.data() + off;
    double* gb = gw + L.in * L.out;
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a.row(i).data();
      for (std::size_t o = 0; o < L.out; ++o) {
        const double d = delta.at(i, o);
        detail::axpy(d, ai, gw + o * L.in, L.in);
        gb[o] += d;
      }
    }
    if (l > 0 || want_input_grad) {
      Tensor prev({n, L.in});
      for (std::size_t i = 0; i < n; ++i) {
        double* pi = prev.row(i).data();
        for (std::size_t o = 0; o < L.out; ++o) {
          detail::axpy(delta.at(i, o), L.weights.data() + o * L.in, pi, L.in);
        }
      }
      delta = std::move(prev);
    }
  }
  if (want_input_grad) r.input_grad = std::move(delta);
  return r;
}

struct BatchGradient {
  double loss = 0.0;          // mean over examples
  std::vector<double> grad;   // gradient of the mean loss
};

// Gradient of the mean loss, computed with the batched path.
inline BatchGradient batch_gradient(const Network& net, const Tensor& batch,
                                    const Tensor& labels, Loss loss) {
  const std::size_t n = batch.rows();
  if (n == 0) throw DimensionError("batch gradient needs a nonempty batch");
  check_labels(net, batch, labels, loss);
  ForwardCache cache = forward_cached(net, batch);
  const Tensor& out = cache.output();
  Tensor out_grad({n, net.output_dim()});
  BatchGradient bg;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = loss_and_output_grad(loss, out.row(i), label_row(labels, i),
                                          out_grad.row(i));
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss at example " + std::to_string(i));
    }
    bg.loss += v;
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : out_grad.data()) g *= inv;
  bg.loss *= inv;
  bg.grad = backward(net, cache, out_grad).param_grad;
  return bg;
}

// ---- Optimizer -------------------------------------------------------------

enum class UpdateRule { kSgd, kRmsprop };

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::kSgd;
  double lr = 0.01;
  double decay = 0.9;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<double> mean_square;
};

inline void optimizer_step(Network& net, std::span<const double> grad,
                           const OptimizerConfig& config, OptimizerState& state) {
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (grad.size() != net.parameter_count()) {
    throw DimensionError("gradient length " + std::to_string(grad.size()) +
                         " does not match parameter count " +
                         std::to_string(net.parameter_count()));
  }
  if (config.rule == UpdateRule::kRmsprop) {
    if (!(config.decay >= 0.0 && config.decay < 1.0) || !(config.eps > 0.0)) {
      throw ConfigError("rmsprop needs decay in [0, 1) and eps > 0");
    }
    if (state.mean_square.size() != grad.size()) {
      state.mean_square.assign(grad.size(), 0.0);
    }
  }
  std::size_t off = 0;
  net.for_each_block([&](std::span<double> block) {
    for (std::size_t i = 0; i < block.size(); ++i, ++off) {
      const double g = grad[off];
      if (config.rule == UpdateRule::kSgd) {
        block[i] -= config.lr * g;
      } else {
        double& s = state.mean_square[off];
        s = config.decay * s + (1.0 - config.decay) * g * g;
        block[i] -= config.lr * g / std::sqrt(s + config.eps);
      }
    }
  });
}

}  // namespace bdpgan

#endif  // BDPGAN_NN_HPP_
