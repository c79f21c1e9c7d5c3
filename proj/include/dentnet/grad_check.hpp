#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dentnet/loss.hpp"
#include "dentnet/network.hpp"

namespace dentnet {

// Compares every analytic parameter gradient against central finite
// differences of the batch cross-entropy. Each loss evaluation reseeds the
// dropout generator identically, so stochastic layers see the same masks on
// every probe and stay differentiable for the check.
//
// Tensors larger than max_per_tensor are subsampled (deterministically, from
// select_seed). Returns the max over checked entries of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(Network& net, const Tensor& batch, const std::vector<int>& labels,
                         double h, std::size_t max_per_tensor = 50,
                         std::uint64_t select_seed = 17, std::uint64_t dropout_seed = 977) {
  auto loss_at = [&]() {
    Prng rng(dropout_seed);
    Tensor probs = net.forward(batch, Mode::Train, &rng);
    return cross_entropy(probs, labels);
  };

  net.zero_grad();
  {
    Prng rng(dropout_seed);
    net.forward(batch, Mode::Train, &rng);
    net.backward(labels);
  }

  std::vector<std::vector<double>> analytic;
  for (auto& p : net.params()) analytic.push_back(p.ref.grad->vec());

  Prng pick(select_seed);
  double worst = 0.0;
  auto params = net.params();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& w = *params[t].ref.value;
    std::vector<std::size_t> idx;
    if (w.size() <= max_per_tensor) {
      idx.resize(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) idx[i] = i;
    } else {
      for (std::size_t i = 0; i < max_per_tensor; ++i)
        idx.push_back(static_cast<std::size_t>(pick.next_below(w.size())));
    }
    for (std::size_t i : idx) {
      const double saved = w[i];
      w[i] = saved + h;
      const double lp = loss_at();
      w[i] = saved - h;
      const double lm = loss_at();
      w[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dentnet
