// Copyright 2026 The lctid Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ==============================================================================

#pragma once

// A small 1D convolutional network engine: valid (unpadded) stride-1
// convolution over time with multi-channel input, ReLU, max pooling,
// inverted dropout, flatten, dense and softmax layers; backpropagation;
// plain gradient-descent training; the CA01/CA02/CA03 builders; finite
// difference gradient checking; and a versioned binary model format.
//
// Tensors are frames x channels (row-major), so a conv output row holds all
// filters for one time step. Flatten keeps that order (index t * C + c).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "lctid/error.hpp"
#include "lctid/io.hpp"
#include "lctid/matrix.hpp"
#include "lctid/random.hpp"

namespace lctid::cnn {

template <typename T>
using Tensor2 = Matrix<T>;

enum class ArchId : std::uint8_t { kCustom = 0, kCA01 = 1, kCA02 = 2, kCA03 = 3 };

inline std::string to_string(ArchId a) {
  switch (a) {
    case ArchId::kCA01: return "CA01";
    case ArchId::kCA02: return "CA02";
    case ArchId::kCA03: return "CA03";
    default: return "custom";
  }
}

inline ArchId parse_arch(std::string_view s) {
  if (s == "CA01") return ArchId::kCA01;
  if (s == "CA02") return ArchId::kCA02;
  if (s == "CA03") return ArchId::kCA03;
  throw InvalidInput("unknown architecture \"" + std::string(s) + "\" (expected CA01, CA02 or CA03)");
}

enum class Mode { kTrain, kInfer };

// Weights laid out [kernel][in][out].
template <typename T>
struct Conv1D {
  std::size_t kernel = 0, in_ch = 0, out_ch = 0;
  std::vector<T> weights;
  std::vector<T> bias;
};

struct ReLU {};
struct MaxPool {
  std::size_t pool = 2;
};
struct Dropout {
  double rate = 0.0;
};
struct Flatten {};

// Weights laid out [in][out].
template <typename T>
struct Dense {
  std::size_t in = 0, out = 0;
  std::vector<T> weights;
  std::vector<T> bias;
};

struct Softmax {};

template <typename T>
using Layer = std::variant<Conv1D<T>, ReLU, MaxPool, Dropout, Flatten, Dense<T>, Softmax>;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

struct Shape {
  std::size_t frames = 0, channels = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.frames) + "x" + std::to_string(s.channels);
}

template <typename T>
std::size_t weight_count(const Layer<T>& layer) {
  return std::visit(Overloaded{
                        [](const Conv1D<T>& c) { return c.weights.size() + c.bias.size(); },
                        [](const Dense<T>& d) { return d.weights.size() + d.bias.size(); },
                        [](const auto&) -> std::size_t { return 0; },
                    },
                    layer);
}

// Output shape of `layer` for input `in`; throws ShapeMismatch when the layer
// cannot accept it. Dense layers see a flattened 1 x n input.
template <typename T>
Shape output_shape(const Layer<T>& layer, Shape in) {
  return std::visit(
      Overloaded{
          [&](const Conv1D<T>& c) {
            if (in.channels != c.in_ch) {
              throw ShapeMismatch("conv expects " + std::to_string(c.in_ch) + " channels, got " +
                                  std::to_string(in.channels));
            }
            if (in.frames < c.kernel) {
              throw ShapeMismatch("conv kernel " + std::to_string(c.kernel) + " longer than input of " +
                                  std::to_string(in.frames) + " frames");
            }
            return Shape{in.frames - c.kernel + 1, c.out_ch};
          },
          [&](const MaxPool& p) {
            if (in.frames / p.pool == 0) throw ShapeMismatch("max pool input shorter than pool size");
            return Shape{in.frames / p.pool, in.channels};
          },
          [&](const Flatten&) { return Shape{1, in.frames * in.channels}; },
          [&](const Dense<T>& d) {
            if (in.frames != 1 || in.channels != d.in) {
              throw ShapeMismatch("dense expects 1x" + std::to_string(d.in) + " input, got " + to_string(in));
            }
            return Shape{1, d.out};
          },
          [&](const auto&) { return in; },
      },
      layer);
}

// Hyper-parameters of the network family. Conv layers come in two blocks of
// two; each block ends with max pooling and dropout.
struct ArchSpec {
  ArchId id = ArchId::kCustom;
  std::array<std::size_t, 4> kernels{};
  std::array<std::size_t, 4> filters{32, 32, 64, 64};
  std::vector<std::size_t> dense;
  double conv_dropout = 0.25;
  double dense_dropout = 0.5;
};

inline ArchSpec arch_spec(ArchId id) {
  ArchSpec s;
  s.id = id;
  switch (id) {
    case ArchId::kCA01:
      s.kernels = {10, 10, 5, 5};
      s.dense = {1024};
      break;
    case ArchId::kCA02:
      s.kernels = {7, 7, 3, 3};
      s.dense = {1024};
      break;
    case ArchId::kCA03:
      s.kernels = {7, 7, 3, 3};
      s.dense = {1024, 512};
      break;
    default:
      throw InvalidInput("arch_spec: no standard parameters for a custom architecture");
  }
  return s;
}

template <typename T>
class Model {
 public:
  std::vector<Layer<T>> layers;
  ArchId arch = ArchId::kCustom;
  Shape input;
  std::uint64_t seed = 0;

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += weight_count<T>(l);
    return n;
  }

  // Shape after each layer (same length as `layers`).
  std::vector<Shape> shapes() const {
    std::vector<Shape> out;
    Shape s = input;
    for (const auto& l : layers) {
      s = output_shape<T>(l, s);
      out.push_back(s);
    }
    return out;
  }

  Shape output() const { return shapes().back(); }

  // Throws ShapeMismatch unless the layers compose from `input` and end in a
  // 2-way softmax.
  void validate() const {
    if (layers.empty() || !std::holds_alternative<Softmax>(layers.back())) {
      throw ShapeMismatch("model must end with a softmax layer");
    }
    const Shape out = output();
    if (out.frames != 1 || out.channels != 2) throw ShapeMismatch("model must output 2 classes, got " + to_string(out));
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.arch = arch;
    m.input = input;
    m.seed = seed;
    for (const auto& l : layers) {
      m.layers.push_back(std::visit(
          Overloaded{
              [](const Conv1D<T>& c) -> Layer<U> {
                return Conv1D<U>{c.kernel, c.in_ch, c.out_ch, std::vector<U>(c.weights.begin(), c.weights.end()),
                                 std::vector<U>(c.bias.begin(), c.bias.end())};
              },
              [](const Dense<T>& d) -> Layer<U> {
                return Dense<U>{d.in, d.out, std::vector<U>(d.weights.begin(), d.weights.end()),
                                std::vector<U>(d.bias.begin(), d.bias.end())};
              },
              [](const ReLU& x) -> Layer<U> { return x; },
              [](const MaxPool& x) -> Layer<U> { return x; },
              [](const Dropout& x) -> Layer<U> { return x; },
              [](const Flatten& x) -> Layer<U> { return x; },
              [](const Softmax& x) -> Layer<U> { return x; },
          },
          l));
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

template <typename T>
void init_uniform(std::vector<T>& w, double limit, Rng& rng) {
  for (auto& x : w) x = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace detail

// Scale applied to the He-uniform limit of the output layer, so that a fresh
// network starts close to the uniform 2-class posterior.
inline constexpr double kOutputInitScale = 0.1;

// Builds a network for a `frames` x `channels` input. Hidden layers get
// He-uniform weights, biases start at zero.
template <typename T = float>
Model<T> build(const ArchSpec& spec, std::size_t frames, std::size_t channels, std::uint64_t seed) {
  if (frames == 0 || channels == 0) throw InvalidInput("build: input shape must be non-empty");
  Model<T> m;
  m.arch = spec.id;
  m.input = {frames, channels};
  m.seed = seed;
  Rng rng(seed);
  std::size_t in_ch = channels;
  for (int block = 0; block < 2; ++block) {
    for (int k = 0; k < 2; ++k) {
      const std::size_t idx = static_cast<std::size_t>(block * 2 + k);
      Conv1D<T> c;
      c.kernel = spec.kernels[idx];
      c.in_ch = in_ch;
      c.out_ch = spec.filters[idx];
      c.weights.resize(c.kernel * c.in_ch * c.out_ch);
      c.bias.assign(c.out_ch, T{0});
      detail::init_uniform(c.weights, std::sqrt(6.0 / static_cast<double>(c.kernel * c.in_ch)), rng);
      in_ch = c.out_ch;
      m.layers.emplace_back(std::move(c));
      m.layers.emplace_back(ReLU{});
    }
    m.layers.emplace_back(MaxPool{2});
    m.layers.emplace_back(Dropout{spec.conv_dropout});
  }
  m.layers.emplace_back(Flatten{});
  // Resolve the flattened width from the conv stack.
  std::size_t width = m.shapes().back().channels;
  for (std::size_t units : spec.dense) {
    Dense<T> d{width, units, std::vector<T>(width * units), std::vector<T>(units, T{0})};
    detail::init_uniform(d.weights, std::sqrt(6.0 / static_cast<double>(width)), rng);
    m.layers.emplace_back(std::move(d));
    m.layers.emplace_back(ReLU{});
    m.layers.emplace_back(Dropout{spec.dense_dropout});
    width = units;
  }
  Dense<T> head{width, 2, std::vector<T>(width * 2), std::vector<T>(2, T{0})};
  detail::init_uniform(head.weights, kOutputInitScale * std::sqrt(6.0 / static_cast<double>(width)), rng);
  m.layers.emplace_back(std::move(head));
  m.layers.emplace_back(Softmax{});
  m.validate();
  return m;
}

template <typename T = float>
Model<T> build(ArchId arch, std::size_t frames = 187, std::size_t channels = 10, std::uint64_t seed = 0) {
  return build<T>(arch_spec(arch), frames, channels, seed);
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct ForwardCache {
  std::vector<Tensor2<T>> inputs;                     // input of each layer
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per MaxPool layer (flat input index)
  std::vector<std::vector<T>> dropout_scale;          // per Dropout layer: 0 or 1/(1-rate)
  Tensor2<T> output;
};

namespace detail {

template <typename T>
Tensor2<T> conv_forward(const Conv1D<T>& c, const Tensor2<T>& x) {
  const std::size_t out_len = x.rows() - c.kernel + 1;
  Tensor2<T> y(out_len, c.out_ch);
  for (std::size_t t = 0; t < out_len; ++t) {
    T* yr = y.row(t).data();
    std::copy(c.bias.begin(), c.bias.end(), yr);
    for (std::size_t j = 0; j < c.kernel; ++j) {
      const T* xr = x.row(t + j).data();
      const T* wj = c.weights.data() + j * c.in_ch * c.out_ch;
      for (std::size_t i = 0; i < c.in_ch; ++i) {
        const T xi = xr[i];
        const T* w = wj + i * c.out_ch;
        for (std::size_t o = 0; o < c.out_ch; ++o) yr[o] += xi * w[o];
      }
    }
  }
  return y;
}

template <typename T>
Tensor2<T> dense_forward(const Dense<T>& d, const Tensor2<T>& x) {
  Tensor2<T> y(1, d.out);
  T* yr = y.data();
  std::copy(d.bias.begin(), d.bias.end(), yr);
  const T* xr = x.data();
  for (std::size_t i = 0; i < d.in; ++i) {
    const T xi = xr[i];
    if (xi == T{0}) continue;
    const T* w = d.weights.data() + i * d.out;
    for (std::size_t o = 0; o < d.out; ++o) yr[o] += xi * w[o];
  }
  return y;
}

template <typename T>
void softmax_inplace(Tensor2<T>& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

}  // namespace detail

// Conv forward for a single layer (valid correlation across time).
template <typename T>
Tensor2<T> conv1d_forward(const Tensor2<T>& input, const Conv1D<T>& layer) {
  output_shape<T>(Layer<T>{layer}, Shape{input.rows(), input.cols()});
  return detail::conv_forward(layer, input);
}

// Runs the network. In train mode dropout masks are drawn from `rng` (which
// must then be non-null) and the per-layer inputs are kept in `cache` for
// backpropagation.
template <typename T>
Tensor2<T> forward(const Model<T>& model, const Tensor2<T>& x, Mode mode = Mode::kInfer, Rng* rng = nullptr,
                   ForwardCache<T>* cache = nullptr) {
  if (x.rows() != model.input.frames || x.cols() != model.input.channels) {
    throw ShapeMismatch("input " + to_string(Shape{x.rows(), x.cols()}) + " does not match model input " +
                        to_string(model.input));
  }
  if (mode == Mode::kTrain && rng == nullptr) throw InvalidInput("forward: train mode needs a dropout rng");
  if (cache) {
    cache->inputs.clear();
    cache->pool_argmax.clear();
    cache->dropout_scale.clear();
  }
  Tensor2<T> cur = x;
  for (const auto& layer : model.layers) {
    if (cache) cache->inputs.push_back(cur);
    cur = std::visit(
        Overloaded{
            [&](const Conv1D<T>& c) { return detail::conv_forward(c, cur); },
            [&](const ReLU&) {
              Tensor2<T> y = cur;
              for (auto& v : y.storage()) v = v > T{0} ? v : T{0};
              return y;
            },
            [&](const MaxPool& p) {
              Tensor2<T> y(cur.rows() / p.pool, cur.cols());
              std::vector<std::uint32_t> arg(y.size());
              for (std::size_t t = 0; t < y.rows(); ++t) {
                for (std::size_t c = 0; c < y.cols(); ++c) {
                  std::size_t best = t * p.pool;
                  for (std::size_t k = 1; k < p.pool; ++k) {
                    if (cur(t * p.pool + k, c) > cur(best, c)) best = t * p.pool + k;
                  }
                  y(t, c) = cur(best, c);
                  arg[t * y.cols() + c] = static_cast<std::uint32_t>(best * cur.cols() + c);
                }
              }
              if (cache) cache->pool_argmax.push_back(std::move(arg));
              return y;
            },
            [&](const Dropout& d) {
              if (mode == Mode::kInfer || d.rate <= 0.0) {
                if (cache) cache->dropout_scale.emplace_back(cur.size(), T{1});
                return cur;
              }
              const T keep_scale = static_cast<T>(1.0 / (1.0 - d.rate));
              std::vector<T> scale(cur.size());
              for (auto& s : scale) s = rng->bernoulli(d.rate) ? T{0} : keep_scale;
              Tensor2<T> y = cur;
              for (std::size_t i = 0; i < y.size(); ++i) y.storage()[i] *= scale[i];
              if (cache) cache->dropout_scale.push_back(std::move(scale));
              return y;
            },
            [&](const Flatten&) {
              Tensor2<T> y(1, cur.size());
              std::copy(cur.storage().begin(), cur.storage().end(), y.storage().begin());
              return y;
            },
            [&](const Dense<T>& d) { return detail::dense_forward(d, cur); },
            [&](const Softmax&) {
              Tensor2<T> y = cur;
              detail::softmax_inplace(y);
              return y;
            },
        },
        layer);
  }
  if (cache) cache->output = cur;
  return cur;
}

// Parameter gradients, one entry per layer (empty for parameter-free layers).
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> weights;
  std::vector<std::vector<T>> bias;

  static Gradients zeros_like(const Model<T>& m) {
    Gradients g;
    for (const auto& l : m.layers) {
      std::visit(Overloaded{
                     [&](const Conv1D<T>& c) {
                       g.weights.emplace_back(c.weights.size(), T{0});
                       g.bias.emplace_back(c.bias.size(), T{0});
                     },
                     [&](const Dense<T>& d) {
                       g.weights.emplace_back(d.weights.size(), T{0});
                       g.bias.emplace_back(d.bias.size(), T{0});
                     },
                     [&](const auto&) {
                       g.weights.emplace_back();
                       g.bias.emplace_back();
                     },
                 },
                 l);
    }
    return g;
  }

  void zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), T{0});
    for (auto& b : bias) std::fill(b.begin(), b.end(), T{0});
  }
};

// Backpropagates dL/d(softmax input) through the network, accumulating into
// `grads`. The softmax layer itself is skipped: cross-entropy on softmax
// outputs has the closed-form logit gradient p - y. Returns dL/d(input).
template <typename T>
Tensor2<T> backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor2<T>& dlogits,
                    Gradients<T>& grads) {
  Tensor2<T> g = dlogits;
  std::size_t pool_idx = cache.pool_argmax.size();
  std::size_t drop_idx = cache.dropout_scale.size();
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& layer = model.layers[li];
    const Tensor2<T>& x = cache.inputs[li];
    g = std::visit(
        Overloaded{
            [&](const Softmax&) { return g; },
            [&](const Dense<T>& d) {
              auto& gw = grads.weights[li];
              auto& gb = grads.bias[li];
              const T* gy = g.data();
              for (std::size_t o = 0; o < d.out; ++o) gb[o] += gy[o];
              Tensor2<T> dx(1, d.in);
              const T* xr = x.data();
              for (std::size_t i = 0; i < d.in; ++i) {
                const T* w = d.weights.data() + i * d.out;
                T acc{0};
#pragma omp simd reduction(+ : acc)
                for (std::size_t o = 0; o < d.out; ++o) acc += w[o] * gy[o];
                dx.data()[i] = acc;
                const T xi = xr[i];
                if (xi == T{0}) continue;
                T* gwi = gw.data() + i * d.out;
                for (std::size_t o = 0; o < d.out; ++o) gwi[o] += xi * gy[o];
              }
              return dx;
            },
            [&](const Flatten&) {
              Tensor2<T> dx(x.rows(), x.cols());
              std::copy(g.storage().begin(), g.storage().end(), dx.storage().begin());
              return dx;
            },
            [&](const Dropout&) {
              const auto& scale = cache.dropout_scale[--drop_idx];
              Tensor2<T> dx = g;
              for (std::size_t i = 0; i < dx.size(); ++i) dx.storage()[i] *= scale[i];
              return dx;
            },
            [&](const MaxPool&) {
              const auto& arg = cache.pool_argmax[--pool_idx];
              Tensor2<T> dx(x.rows(), x.cols(), T{0});
              for (std::size_t i = 0; i < arg.size(); ++i) dx.storage()[arg[i]] += g.storage()[i];
              return dx;
            },
            [&](const ReLU&) {
              Tensor2<T> dx = g;
              for (std::size_t i = 0; i < dx.size(); ++i) {
                if (!(x.storage()[i] > T{0})) dx.storage()[i] = T{0};
              }
              return dx;
            },
            [&](const Conv1D<T>& c) {
              auto& gw = grads.weights[li];
              auto& gb = grads.bias[li];
              Tensor2<T> dx(x.rows(), x.cols(), T{0});
              const std::size_t out_len = g.rows();
              for (std::size_t t = 0; t < out_len; ++t) {
                const T* gy = g.row(t).data();
                for (std::size_t o = 0; o < c.out_ch; ++o) gb[o] += gy[o];
                for (std::size_t j = 0; j < c.kernel; ++j) {
                  const T* xr = x.row(t + j).data();
                  T* dxr = dx.row(t + j).data();
                  const T* wj = c.weights.data() + j * c.in_ch * c.out_ch;
                  T* gwj = gw.data() + j * c.in_ch * c.out_ch;
                  for (std::size_t i = 0; i < c.in_ch; ++i) {
                    const T* w = wj + i * c.out_ch;
                    T* gwi = gwj + i * c.out_ch;
                    const T xi = xr[i];
                    T acc{0};
#pragma omp simd reduction(+ : acc)
                    for (std::size_t o = 0; o < c.out_ch; ++o) {
                      acc += w[o] * gy[o];
                    }
                    for (std::size_t o = 0; o < c.out_ch; ++o) gwi[o] += xi * gy[o];
                    dxr[i] += acc;
                  }
                }
              }
              return dx;
            },
        },
        layer);
  }
  return g;
}

// Cross-entropy of softmax output `probs` (1 x 2) against a target
// distribution (one-hot or soft).
template <typename T>
double cross_entropy(const Tensor2<T>& probs, std::span<const double> target) {
  double loss = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] > 0.0) {
      loss -= target[k] * std::log(std::max(static_cast<double>(probs.data()[k]), 1e-300));
    }
  }
  return loss;
}

inline std::array<double, 2> one_hot(int label) {
  std::array<double, 2> t{0.0, 0.0};
  t[label == 0 ? 0 : 1] = 1.0;
  return t;
}

template <typename T>
Tensor2<T> logit_gradient(const Tensor2<T>& probs, std::span<const double> target) {
  Tensor2<T> g(1, probs.cols());
  for (std::size_t k = 0; k < probs.cols(); ++k) g.data()[k] = probs.data()[k] - static_cast<T>(target[k]);
  return g;
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { kMiniBatchGd, kSgd };

inline std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "minibatch_gd"; }

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "minibatch_gd") return Optimizer::kMiniBatchGd;
  throw InvalidInput("unknown optimizer \"" + std::string(s) + "\" (expected minibatch_gd or sgd)");
}

// CA01/CA02 train with mini-batch gradient descent, CA03 with stochastic
// gradient descent.
inline Optimizer default_optimizer(ArchId a) { return a == ArchId::kCA03 ? Optimizer::kSgd : Optimizer::kMiniBatchGd; }

struct TrainConfig {
  Optimizer optimizer = Optimizer::kMiniBatchGd;
  std::size_t batch_size = 32;  // used by minibatch_gd; sgd always steps per sample
  double learning_rate = 0.01;
  std::size_t epochs = 20;
  double conv_dropout = 0.25;
  double dense_dropout = 0.5;
  std::size_t patience = 5;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  std::size_t effective_batch() const { return optimizer == Optimizer::kSgd ? 1 : std::max<std::size_t>(1, batch_size); }

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("learning_rate must be >= 0");
    if (epochs < 1) throw InvalidInput("epochs must be >= 1");
    if (conv_dropout < 0.0 || conv_dropout >= 1.0 || dense_dropout < 0.0 || dense_dropout >= 1.0) {
      throw InvalidInput("dropout rates must lie in [0, 1)");
    }
  }
};

template <typename T>
struct Example {
  const Tensor2<T>* input = nullptr;
  int label = 0;  // 0 = LT, 1 = CT
};

template <typename T>
void apply_update(Model<T>& model, const Gradients<T>& grads, double lr) {
  const T step = static_cast<T>(lr);
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto update = [&](std::vector<T>& w, std::vector<T>& b) {
      const auto& gw = grads.weights[li];
      const auto& gb = grads.bias[li];
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * gw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= step * gb[i];
    };
    std::visit(Overloaded{
                   [&](Conv1D<T>& c) { update(c.weights, c.bias); },
                   [&](Dense<T>& d) { update(d.weights, d.bias); },
                   [](auto&) {},
               },
               model.layers[li]);
  }
}

// One gradient step on `batch`: mean cross-entropy, full backpropagation,
// parameters -= lr * mean gradient. Returns the pre-update mean loss.
template <typename T>
double train_step(Model<T>& model, std::span<const Example<T>> batch, double learning_rate, Rng& rng,
                  Gradients<T>* scratch = nullptr) {
  if (batch.empty()) throw InvalidInput("train_step: empty batch");
  Gradients<T> local;
  if (!scratch) {
    local = Gradients<T>::zeros_like(model);
    scratch = &local;
  } else {
    scratch->zero();
  }
  ForwardCache<T> cache;
  double loss = 0.0;
  for (const auto& ex : batch) {
    const auto probs = forward(model, *ex.input, Mode::kTrain, &rng, &cache);
    const auto target = one_hot(ex.label);
    loss += cross_entropy(probs, target);
    backward(model, cache, logit_gradient(probs, target), *scratch);
  }
  loss /= static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw Diverged("training diverged: non-finite loss");
  if (batch.size() > 1) {
    const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    for (auto& w : scratch->weights) for (auto& v : w) v *= inv;
    for (auto& b : scratch->bias) for (auto& v : b) v *= inv;
  }
  if (learning_rate != 0.0) apply_update(model, *scratch, learning_rate);
  return loss;
}

template <typename T>
double mean_loss(const Model<T>& model, std::span<const Example<T>> data) {
  if (data.empty()) return 0.0;
  double loss = 0.0;
  for (const auto& ex : data) {
    const auto probs = forward(model, *ex.input);
    loss += cross_entropy(probs, one_hot(ex.label));
  }
  return loss / static_cast<double>(data.size());
}

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Trains for up to config.epochs epochs, visiting the examples in a fresh
// seeded order each epoch. With a validation set, the weights from the epoch
// with the lowest validation loss are kept and training stops after
// `patience` epochs without improvement.
template <typename T>
TrainHistory train(Model<T>& model, std::span<const Example<T>> data, const TrainConfig& config,
                   std::span<const Example<T>> validation = {}) {
  config.validate();
  if (data.empty()) throw InvalidInput("train: no training examples");
  Rng rng(config.seed);
  TrainHistory hist;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto scratch = Gradients<T>::zeros_like(model);
  const std::size_t batch = config.effective_batch();
  std::optional<Model<T>> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<Example<T>> chunk;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      chunk.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) chunk.push_back(data[order[k]]);
      epoch_loss += train_step<T>(model, chunk, config.learning_rate, rng, &scratch) * static_cast<double>(chunk.size());
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    if (!validation.empty()) {
      const double v = mean_loss(model, validation);
      hist.validation_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = model;
        hist.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        hist.stopped_early = true;
        break;
      }
    } else {
      hist.best_epoch = epoch;
    }
  }
  if (best) model = std::move(*best);
  return hist;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t num_checked = 0;
};

// Relative error between two derivative estimates. The denominator is floored
// so that derivatives that are zero up to rounding do not divide by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares every parameter's backpropagated gradient with a central finite
// difference of the loss. Dropout layers are exercised with one fixed mask
// (drawn from `mask_seed`), so the loss is a deterministic function of the
// parameters.
inline GradCheckResult grad_check(Model<double> model, const Tensor2<double>& input, std::span<const double> target,
                                  double epsilon = 1e-5, std::uint64_t mask_seed = 1) {
  auto loss_at = [&](const Model<double>& m) {
    Rng rng(mask_seed);
    return cross_entropy(forward(m, input, Mode::kTrain, &rng), target);
  };
  auto grads = Gradients<double>::zeros_like(model);
  {
    Rng rng(mask_seed);
    ForwardCache<double> cache;
    const auto probs = forward(model, input, Mode::kTrain, &rng, &cache);
    backward(model, cache, logit_gradient(probs, target), grads);
  }
  GradCheckResult res;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + epsilon;
        const double up = loss_at(model);
        params[i] = saved - epsilon;
        const double down = loss_at(model);
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic[i], numeric));
        res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(analytic[i]));
        ++res.num_checked;
      }
    };
    std::visit(Overloaded{
                   [&](Conv1D<double>& c) {
                     check(c.weights, grads.weights[li]);
                     check(c.bias, grads.bias[li]);
                   },
                   [&](Dense<double>& d) {
                     check(d.weights, grads.weights[li]);
                     check(d.bias, grads.bias[li]);
                   },
                   [](auto&) {},
               },
               model.layers[li]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (little-endian): "LCT1", u32 version, u8 arch, u32 input frames,
// u32 input channels, u64 seed, u32 layer count, then per layer a u8 kind tag
// followed by its shape fields and float32 parameters.

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

enum class LayerTag : std::uint8_t { kConv = 1, kRelu, kMaxPool, kDropout, kFlatten, kDense, kSoftmax };

struct Writer {
  std::string out;
  void bytes(const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
};

struct Reader {
  std::string_view in;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > in.size()) throw CorruptFile("model file truncated at byte " + std::to_string(pos));
  }
  template <typename V>
  V read() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, in.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
  }
};

}  // namespace detail

template <typename T>
std::string serialize(const Model<T>& model) {
  static_assert(std::endian::native == std::endian::little, "model format assumes a little-endian host");
  using detail::LayerTag;
  detail::Writer w;
  w.bytes("LCT1", 4);
  w.u32(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(model.arch));
  w.u32(static_cast<std::uint32_t>(model.input.frames));
  w.u32(static_cast<std::uint32_t>(model.input.channels));
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  auto floats = [&](const std::vector<T>& v) {
    for (T x : v) w.f32(static_cast<float>(x));
  };
  for (const auto& layer : model.layers) {
    std::visit(Overloaded{
                   [&](const Conv1D<T>& c) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::kConv));
                     w.u32(static_cast<std::uint32_t>(c.kernel));
                     w.u32(static_cast<std::uint32_t>(c.in_ch));
                     w.u32(static_cast<std::uint32_t>(c.out_ch));
                     floats(c.weights);
                     floats(c.bias);
                   },
                   [&](const ReLU&) { w.u8(static_cast<std::uint8_t>(LayerTag::kRelu)); },
                   [&](const MaxPool& p) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::kMaxPool));
                     w.u32(static_cast<std::uint32_t>(p.pool));
                   },
                   [&](const Dropout& d) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::kDropout));
                     w.f32(static_cast<float>(d.rate));
                   },
                   [&](const Flatten&) { w.u8(static_cast<std::uint8_t>(LayerTag::kFlatten)); },
                   [&](const Dense<T>& d) {
                     w.u8(static_cast<std::uint8_t>(LayerTag::kDense));
                     w.u32(static_cast<std::uint32_t>(d.in));
                     w.u32(static_cast<std::uint32_t>(d.out));
                     floats(d.weights);
                     floats(d.bias);
                   },
                   [&](const Softmax&) { w.u8(static_cast<std::uint8_t>(LayerTag::kSoftmax)); },
               },
               layer);
  }
  return std::move(w.out);
}

template <typename T = float>
Model<T> deserialize(std::string_view bytes) {
  using detail::LayerTag;
  detail::Reader r{bytes};
  if (bytes.size() < 4 || bytes.substr(0, 4) != "LCT1") throw CorruptFile("not a model file (bad magic)");
  r.pos = 4;
  const auto version = r.read<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw VersionMismatch("model format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
  }
  Model<T> m;
  const auto arch = r.read<std::uint8_t>();
  if (arch > static_cast<std::uint8_t>(ArchId::kCA03)) throw CorruptFile("unknown architecture tag");
  m.arch = static_cast<ArchId>(arch);
  m.input.frames = r.read<std::uint32_t>();
  m.input.channels = r.read<std::uint32_t>();
  m.seed = r.read<std::uint64_t>();
  const auto n_layers = r.read<std::uint32_t>();
  auto floats = [&](std::size_t n) {
    r.need(n * 4);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(r.read<float>());
    return v;
  };
  constexpr std::uint32_t kMaxDim = 1u << 24;
  auto dim = [&] {
    const auto d = r.read<std::uint32_t>();
    if (d == 0 || d > kMaxDim) throw CorruptFile("implausible layer dimension");
    return static_cast<std::size_t>(d);
  };
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto tag = static_cast<LayerTag>(r.read<std::uint8_t>());
    switch (tag) {
      case LayerTag::kConv: {
        Conv1D<T> c;
        c.kernel = dim();
        c.in_ch = dim();
        c.out_ch = dim();
        c.weights = floats(c.kernel * c.in_ch * c.out_ch);
        c.bias = floats(c.out_ch);
        m.layers.emplace_back(std::move(c));
        break;
      }
      case LayerTag::kRelu: m.layers.emplace_back(ReLU{}); break;
      case LayerTag::kMaxPool: m.layers.emplace_back(MaxPool{dim()}); break;
      case LayerTag::kDropout: {
        const float rate = r.read<float>();
        if (!(rate >= 0.0f && rate < 1.0f)) throw CorruptFile("dropout rate out of range");
        m.layers.emplace_back(Dropout{static_cast<double>(rate)});
        break;
      }
      case LayerTag::kFlatten: m.layers.emplace_back(Flatten{}); break;
      case LayerTag::kDense: {
        Dense<T> d;
        d.in = dim();
        d.out = dim();
        d.weights = floats(d.in * d.out);
        d.bias = floats(d.out);
        m.layers.emplace_back(std::move(d));
        break;
      }
      case LayerTag::kSoftmax: m.layers.emplace_back(Softmax{}); break;
      default: throw CorruptFile("unknown layer tag " + std::to_string(static_cast<int>(tag)));
    }
  }
  if (r.pos != bytes.size()) throw CorruptFile("trailing bytes after model payload");
  try {
    m.validate();
  } catch (const ShapeMismatch& e) {
    throw CorruptFile(std::string("inconsistent model: ") + e.what());
  }
  return m;
}

template <typename T>
void save(const Model<T>& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(model));
}

template <typename T = float>
Model<T> load(const std::filesystem::path& path) {
  return deserialize<T>(io::read_file(path));
}

}  // namespace lctid::cnn
