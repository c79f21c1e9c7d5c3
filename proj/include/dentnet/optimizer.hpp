#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/network.hpp"

namespace dentnet {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("momentum must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  }
};

// Momentum SGD: v <- mu*v - eta*g; w <- w + v. mu = 0 gives plain SGD.
// Velocity buffers are keyed by parameter order, which is stable for a
// given network.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum)
      : lr_(learning_rate), mu_(momentum) {
    if (!(learning_rate > 0.0) && learning_rate != 0.0)
      throw std::invalid_argument("sgd: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("sgd: momentum must be in [0,1)");
  }

  void step(Network& net) { step(net.params()); }

  void step(const std::vector<NamedParam>& params) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        velocity_[i].assign(params[i].ref.value->size(), 0.0);
    }
    if (velocity_.size() != params.size())
      throw std::logic_error("sgd: parameter registry changed under the optimizer");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& w = *params[i].ref.value;
      const Tensor& g = *params[i].ref.grad;
      std::vector<double>& v = velocity_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (!std::isfinite(g[j]))
          throw std::runtime_error("sgd: non-finite gradient in layer " +
                                   std::to_string(params[i].layer_index) + " (" +
                                   params[i].layer_kind + ") param '" + params[i].ref.name +
                                   "'");
        v[j] = mu_ * v[j] - lr_ * g[j];
        w[j] += v[j];
      }
    }
  }

  double learning_rate() const { return lr_; }
  double momentum() const { return mu_; }

 private:
  double lr_, mu_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace dentnet
