#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/loss.hpp"
#include "dentnet/network.hpp"
#include "dentnet/optimizer.hpp"
#include "dentnet/prng.hpp"

namespace dentnet {

// Classifier topology: conv_blocks x (conv filters@kxk, relu, maxpool,
// dropout) feeding fc_units -> relu -> dropout -> linear head -> softmax.
struct CnnConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t channels = 3;
  std::size_t classes = 8;
  std::size_t conv_blocks = 4;
  std::size_t filters = 16;
  std::size_t kernel = 5;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::size_t fc_units = 128;
  double conv_dropout = 0.25;
  double fc_dropout = 0.5;

  void validate() const {
    if (height == 0 || width == 0 || channels == 0)
      throw std::invalid_argument("cnn config: input dimensions must be positive");
    if (classes < 2) throw std::invalid_argument("cnn config: need at least 2 classes");
    if (conv_blocks == 0) throw std::invalid_argument("cnn config: need at least 1 conv block");
    if (filters == 0 || kernel == 0 || fc_units == 0)
      throw std::invalid_argument("cnn config: filters, kernel and fc_units must be positive");
    if (pool_window == 0 || pool_stride == 0)
      throw std::invalid_argument("cnn config: pool window and stride must be positive");
    std::size_t h = height, w = width;
    for (std::size_t b = 0; b < conv_blocks; ++b) {
      if (h < pool_window || w < pool_window || h % pool_stride != 0 || w % pool_stride != 0)
        throw std::invalid_argument(
            "cnn config: input " + std::to_string(height) + "x" + std::to_string(width) +
            " does not pool evenly through " + std::to_string(conv_blocks) + " blocks");
      h /= pool_stride;
      w /= pool_stride;
    }
  }

  std::size_t flattened_size() const {
    std::size_t h = height, w = width;
    for (std::size_t b = 0; b < conv_blocks; ++b) {
      h /= pool_stride;
      w /= pool_stride;
    }
    return h * w * filters;
  }
};

inline Network build_damage_cnn(const CnnConfig& cfg) {
  cfg.validate();
  Network net({cfg.height, cfg.width, cfg.channels}, cfg.classes);
  std::size_t in_c = cfg.channels;
  for (std::size_t b = 0; b < cfg.conv_blocks; ++b) {
    net.add(std::make_unique<Conv2dLayer>(cfg.kernel, in_c, cfg.filters));
    net.add(std::make_unique<ReluLayer>());
    net.add(std::make_unique<MaxPoolLayer>(cfg.pool_window, cfg.pool_stride));
    if (cfg.conv_dropout > 0.0) net.add(std::make_unique<DropoutLayer>(cfg.conv_dropout));
    in_c = cfg.filters;
  }
  net.add(std::make_unique<DenseLayer>(cfg.flattened_size(), cfg.fc_units));
  net.add(std::make_unique<ReluLayer>());
  if (cfg.fc_dropout > 0.0) net.add(std::make_unique<DropoutLayer>(cfg.fc_dropout));
  net.add(std::make_unique<DenseLayer>(cfg.fc_units, cfg.classes));
  net.add(std::make_unique<SoftmaxLayer>());
  return net;
}

inline Tensor stack_samples(const std::vector<Tensor>& images,
                            const std::vector<std::size_t>& indices, std::size_t begin,
                            std::size_t end) {
  if (begin >= end) throw std::invalid_argument("stack_samples: empty index range");
  const Shape& s = images[indices[begin]].shape();
  Shape batched;
  batched.push_back(end - begin);
  batched.insert(batched.end(), s.begin(), s.end());
  Tensor out(batched);
  const std::size_t per = images[indices[begin]].size();
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor& img = images[indices[i]];
    if (img.size() != per)
      throw std::invalid_argument("stack_samples: sample " + std::to_string(indices[i]) +
                                  " has shape " + shape_str(img.shape()) + ", expected " +
                                  shape_str(s));
    std::copy(img.data(), img.data() + per, out.data() + (i - begin) * per);
  }
  return out;
}

// Forward a whole set in eval mode; returns [N x classes] probabilities.
inline Tensor predict_probs(Network& net, const std::vector<Tensor>& images,
                            std::size_t batch_size = 32) {
  if (images.empty()) throw std::invalid_argument("predict_probs: no images");
  if (batch_size == 0) throw std::invalid_argument("predict_probs: batch_size must be positive");
  const std::size_t n = images.size();
  Tensor probs({n, net.class_count()});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t at = 0; at < n; at += batch_size) {
    const std::size_t stop = std::min(n, at + batch_size);
    Tensor out = net.forward(stack_samples(images, order, at, stop), Mode::Eval);
    std::copy(out.data(), out.data() + out.size(), probs.data() + at * net.class_count());
  }
  return probs;
}

inline std::vector<int> predict_labels(Network& net, const std::vector<Tensor>& images,
                                       std::size_t batch_size = 32) {
  return argmax_rows(predict_probs(net, images, batch_size));
}

inline double evaluate_accuracy(Network& net, const std::vector<Tensor>& images,
                                const std::vector<int>& labels, std::size_t batch_size = 32) {
  if (images.size() != labels.size())
    throw std::invalid_argument("evaluate_accuracy: " + std::to_string(images.size()) +
                                " images vs " + std::to_string(labels.size()) + " labels");
  const std::vector<int> pred = predict_labels(net, images, batch_size);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct FitOptions {
  const std::vector<Tensor>* eval_images = nullptr;
  const std::vector<int>* eval_labels = nullptr;
  double stop_at_eval_accuracy = 2.0;  // > 1 means never stop early
  std::ostream* log = nullptr;
};

// Minibatch SGD training loop. Epoch loss is the sample-weighted mean of
// minibatch cross-entropies; history gets one entry per completed epoch.
inline std::vector<EpochStats> train_classifier(Network& net, const std::vector<Tensor>& images,
                                                const std::vector<int>& labels,
                                                const TrainConfig& cfg,
                                                const FitOptions& opt = {}) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("train_classifier: no training images");
  if (images.size() != labels.size())
    throw std::invalid_argument("train_classifier: " + std::to_string(images.size()) +
                                " images vs " + std::to_string(labels.size()) + " labels");
  if ((opt.eval_images == nullptr) != (opt.eval_labels == nullptr))
    throw std::invalid_argument("train_classifier: eval images and labels must come together");

  const std::size_t n = images.size();
  Prng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Prng dropout_rng(derive_seed(cfg.seed, "dropout"));
  SgdMomentum sgd(cfg.learning_rate, cfg.momentum);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochStats> history;
  history.reserve(cfg.epochs);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t hit = 0;
    for (std::size_t at = 0; at < n; at += cfg.batch_size) {
      const std::size_t stop = std::min(n, at + cfg.batch_size);
      Tensor batch = stack_samples(images, order, at, stop);
      std::vector<int> batch_labels(stop - at);
      for (std::size_t i = at; i < stop; ++i) batch_labels[i - at] = labels[order[i]];

      const Tensor probs = net.forward(batch, Mode::Train, &dropout_rng);
      loss_sum += cross_entropy(probs, batch_labels) * static_cast<double>(stop - at);
      const std::vector<int> pred = argmax_rows(probs);
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == batch_labels[i]) ++hit;

      net.zero_grad();
      net.backward(batch_labels);
      sgd.step(net);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(hit) / static_cast<double>(n);
    if (opt.eval_images)
      stats.eval_accuracy = evaluate_accuracy(net, *opt.eval_images, *opt.eval_labels,
                                              cfg.batch_size);
    history.push_back(stats);

    if (opt.log) {
      *opt.log << "epoch " << epoch << "/" << cfg.epochs << "  loss " << stats.train_loss
               << "  acc " << stats.train_accuracy;
      if (opt.eval_images) *opt.log << "  eval " << stats.eval_accuracy;
      *opt.log << "\n";
    }
    if (opt.eval_images && stats.eval_accuracy >= opt.stop_at_eval_accuracy) break;
  }
  return history;
}

}  // namespace dentnet
