#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dentnet/tensor.hpp"

namespace dentnet {

// Mean negative log-likelihood of the true class over a [B x K] probability
// matrix. The log argument is clamped at 1e-12.
inline double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2)
    throw std::invalid_argument("cross_entropy: expected [BxK] probabilities, got " +
                                shape_str(probs.shape()));
  const std::size_t b = probs.dim(0), k = probs.dim(1);
  if (labels.size() != b)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(b));
  double sum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(k) + ")");
    sum -= std::log(std::max(probs(i, static_cast<std::size_t>(y)), 1e-12));
  }
  return sum / static_cast<double>(b);
}

// Mean squared error between two same-shaped tensors.
inline double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace dentnet
