#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dentnet/layer.hpp"

namespace dentnet {

struct NamedParam {
  std::size_t layer_index;
  std::string layer_kind;
  ParamRef ref;
};

// Glorot-style uniform init for one layer, biases zero. Layers without
// parameters are left alone. Draw order is fixed by parameter order.
inline void init_layer_params(Layer& layer, Prng& rng) {
  std::size_t fan_in = 0, fan_out = 0;
  if (auto* conv = dynamic_cast<Conv2dLayer*>(&layer)) {
    fan_in = conv->kernel() * conv->kernel() * conv->in_channels();
    fan_out = conv->kernel() * conv->kernel() * conv->filters();
  } else if (auto* fc = dynamic_cast<DenseLayer*>(&layer)) {
    fan_in = fc->in_features();
    fan_out = fc->out_features();
  } else {
    return;
  }
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& p : layer.params()) {
    if (p.name == "bias") {
      p.value->fill(0.0);
    } else {
      for (std::size_t i = 0; i < p.value->size(); ++i) (*p.value)[i] = rng.uniform(-a, a);
    }
  }
}

// Ordered layer stack ending in a softmax over class_count classes.
// Layer shapes are composed symbolically as layers are added, so a
// mismatched stack fails at build time, not at first forward.
class Network {
 public:
  Network(Shape input_shape, std::size_t class_count)
      : input_shape_(std::move(input_shape)), class_count_(class_count) {
    if (class_count_ == 0) throw std::invalid_argument("network: class count must be positive");
    current_shape_ = input_shape_;
  }

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Network& add(std::unique_ptr<Layer> layer) {
    try {
      current_shape_ = layer->output_shape(current_shape_);
    } catch (const std::exception& e) {
      throw std::invalid_argument("layer " + std::to_string(layers_.size()) + " (" +
                                  layer->kind() + "): " + e.what());
    }
    layers_.push_back(std::move(layer));
    return *this;
  }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t class_count() const { return class_count_; }
  const Shape& output_shape() const { return current_shape_; }

  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

  std::vector<NamedParam> params() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& p : layers_[i]->params()) out.push_back({i, layers_[i]->kind(), p});
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += p.ref.value->size();
    return n;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  // Glorot-style uniform init, biases zero. Draw order is fixed by layer
  // order so a given seed always produces the same weights.
  void init_params(Prng& rng) {
    for (auto& l : layers_) init_layer_params(*l, rng);
  }

  // Runs the stack on a [B x input...] batch and returns [B x K] class
  // probabilities. rng feeds dropout and is required only in train mode
  // when some dropout layer has a nonzero rate.
  Tensor forward(const Tensor& batch, Mode mode, Prng* rng = nullptr) {
    if (sample_shape(batch) != input_shape_)
      throw std::invalid_argument("network input shape " + shape_str(sample_shape(batch)) +
                                  " does not match expected " + shape_str(input_shape_));
    Tensor x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        x = layers_[i]->forward(x, mode, rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                                 "): " + e.what());
      }
    }
    return x;
  }

  // Gradient of the mean cross-entropy over the batch with respect to every
  // parameter. Uses the fused softmax/cross-entropy identity at the logits:
  // dL/dz = (p - onehot)/B. Requires a train-mode forward for this batch.
  void backward(const std::vector<int>& labels) {
    if (layers_.empty() || layers_.back()->kind() != "softmax")
      throw std::logic_error("network: backward requires a trailing softmax layer");
    auto* sm = static_cast<SoftmaxLayer*>(layers_.back().get());
    if (!sm->has_cache())
      throw std::logic_error("softmax: backward called without a preceding forward");
    const Tensor& probs = sm->cached_probs();
    const std::size_t b = probs.dim(0), k = probs.dim(1);
    if (labels.size() != b)
      throw std::invalid_argument("backward: " + std::to_string(labels.size()) +
                                  " labels for a batch of " + std::to_string(b));
    Tensor delta = probs;
    for (std::size_t i = 0; i < b; ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= k)
        throw std::invalid_argument("backward: label " + std::to_string(y) +
                                    " outside [0," + std::to_string(k) + ")");
      delta(i, static_cast<std::size_t>(y)) -= 1.0;
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= inv_b;
    sm->drop_cache();
    for (std::size_t i = layers_.size() - 1; i-- > 0;) delta = layers_[i]->backward(delta);
  }

 private:
  Shape input_shape_;
  std::size_t class_count_;
  Shape current_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

inline std::vector<int> argmax_rows(const Tensor& probs) {
  const std::size_t b = probs.dim(0), k = probs.dim(1);
  std::vector<int> out(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    double best = probs(i, 0);
    for (std::size_t j = 1; j < k; ++j) {
      if (probs(i, j) > best) {
        best = probs(i, j);
        out[i] = static_cast<int>(j);
      }
    }
  }
  return out;
}

}  // namespace dentnet
