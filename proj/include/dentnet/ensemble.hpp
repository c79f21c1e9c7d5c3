#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/features.hpp"
#include "dentnet/linear_head.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

// Weighted probability averaging over member classifiers, plus Top-k
// member selection by validation accuracy.

inline void check_ensemble_weights(const std::vector<double>& weights) {
  if (weights.empty()) throw std::invalid_argument("ensemble: no weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("ensemble: weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("ensemble: weights sum to " + std::to_string(sum) +
                                ", need 1 within 1e-12");
}

inline std::vector<double> uniform_weights(std::size_t members) {
  if (members == 0) throw std::invalid_argument("ensemble: no members");
  return std::vector<double>(members, 1.0 / static_cast<double>(members));
}

// Weights proportional to validation accuracy.
inline std::vector<double> accuracy_weights(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw std::invalid_argument("ensemble: no members");
  double sum = 0.0;
  for (double a : accuracies) {
    if (!(a >= 0.0)) throw std::invalid_argument("ensemble: accuracies must be >= 0");
    sum += a;
  }
  if (sum <= 0.0) return uniform_weights(accuracies.size());
  std::vector<double> w(accuracies.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = accuracies[i] / sum;
  return w;
}

// p = sum_m weight_m * p_m over one example's member rows.
inline std::vector<double> ensemble_predict_row(
    const std::vector<std::vector<double>>& member_rows, const std::vector<double>& weights) {
  if (member_rows.size() != weights.size())
    throw std::invalid_argument("ensemble: " + std::to_string(member_rows.size()) +
                                " member rows vs " + std::to_string(weights.size()) +
                                " weights");
  check_ensemble_weights(weights);
  const std::size_t k = member_rows[0].size();
  for (std::size_t m = 0; m < member_rows.size(); ++m) {
    if (member_rows[m].size() != k)
      throw std::invalid_argument("ensemble: member " + std::to_string(m) + " row length " +
                                  std::to_string(member_rows[m].size()) + ", expected " +
                                  std::to_string(k));
    double sum = 0.0;
    for (double p : member_rows[m]) sum += p;
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("ensemble: member " + std::to_string(m) +
                                  " row does not sum to 1");
  }
  std::vector<double> out(k, 0.0);
  for (std::size_t m = 0; m < member_rows.size(); ++m)
    for (std::size_t c = 0; c < k; ++c) out[c] += weights[m] * member_rows[m][c];
  return out;
}

// Batch form over per-member [N x K] probability matrices.
inline Tensor ensemble_predict(const std::vector<Tensor>& member_probs,
                               const std::vector<double>& weights) {
  if (member_probs.size() != weights.size())
    throw std::invalid_argument("ensemble: " + std::to_string(member_probs.size()) +
                                " member matrices vs " + std::to_string(weights.size()) +
                                " weights");
  check_ensemble_weights(weights);
  const Shape shape = member_probs[0].shape();
  for (const auto& p : member_probs)
    require_same_shape(member_probs[0], p, "ensemble member probabilities");
  Tensor out = Tensor::zeros(shape);
  for (std::size_t m = 0; m < member_probs.size(); ++m)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[m] * member_probs[m][i];
  return out;
}

// Indices of the k best validation scores; ties keep the lower index.
inline std::vector<std::size_t> select_top_k(const std::vector<double>& validation_scores,
                                             std::size_t k) {
  if (k > validation_scores.size())
    throw std::invalid_argument("ensemble: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(validation_scores.size()) + " members");
  std::vector<std::size_t> idx(validation_scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return validation_scores[a] > validation_scores[b];
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Convenience: score each head on its own validation set first.
inline std::vector<std::size_t> select_top_k(const std::vector<LinearHead>& heads,
                                             const std::vector<const FeatureSet*>& validation,
                                             std::size_t k) {
  if (heads.size() != validation.size())
    throw std::invalid_argument("ensemble: " + std::to_string(heads.size()) + " heads vs " +
                                std::to_string(validation.size()) + " validation sets");
  std::vector<double> scores(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i)
    scores[i] = head_accuracy(heads[i], *validation[i]);
  return select_top_k(scores, k);
}

}  // namespace dentnet
