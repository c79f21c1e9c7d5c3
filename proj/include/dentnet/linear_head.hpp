#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/features.hpp"
#include "dentnet/ops.hpp"
#include "dentnet/prng.hpp"

namespace dentnet {

enum class HeadKind { Softmax, Svm };

inline std::string head_kind_name(HeadKind k) {
  return k == HeadKind::Softmax ? "softmax" : "svm";
}

struct HeadConfig {
  double lr = 0.1;
  double l2 = 1e-4;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("head config: lr must be > 0");
    if (!(l2 >= 0.0)) throw std::invalid_argument("head config: l2 must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("head config: batch_size must be >= 1");
  }
};

// Linear classifier over frozen feature vectors. Scores are x.W + b; both
// kinds expose probabilities via a row softmax (for the SVM that is the
// margin calibration, so ensemble members mix on a common scale).
struct LinearHead {
  HeadKind kind = HeadKind::Softmax;
  Tensor W{{1, 1}};  // D x K
  Tensor b{{1}};     // K

  std::size_t dim() const { return W.dim(0); }
  std::size_t class_count() const { return W.dim(1); }

  Tensor scores(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(1) != dim())
      throw std::invalid_argument("head: features " + shape_str(features.shape()) +
                                  " do not match weights " + shape_str(W.shape()));
    Tensor s = matmul(features, W);
    for (std::size_t i = 0; i < s.dim(0); ++i)
      for (std::size_t k = 0; k < class_count(); ++k) s(i, k) += b[k];
    return s;
  }

  Tensor predict_probs(const Tensor& features) const {
    Tensor s = scores(features);
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      double mx = s(i, 0);
      for (std::size_t k = 1; k < class_count(); ++k) mx = std::max(mx, s(i, k));
      double sum = 0.0;
      for (std::size_t k = 0; k < class_count(); ++k) {
        s(i, k) = std::exp(s(i, k) - mx);
        sum += s(i, k);
      }
      for (std::size_t k = 0; k < class_count(); ++k) s(i, k) /= sum;
    }
    return s;
  }

  std::vector<int> predict_labels(const Tensor& features) const {
    const Tensor s = scores(features);
    std::vector<int> out(s.dim(0));
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < class_count(); ++k)
        if (s(i, k) > s(i, best)) best = k;
      out[i] = static_cast<int>(best);
    }
    return out;
  }
};

inline double head_accuracy(const LinearHead& head, const FeatureSet& fs) {
  fs.validate();
  const std::vector<int> pred = head.predict_labels(fs.features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == fs.labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace head_detail {

inline void check_all_classes_present(const FeatureSet& fs) {
  std::vector<bool> seen(fs.class_count, false);
  for (int label : fs.labels) seen[static_cast<std::size_t>(label)] = true;
  for (std::size_t k = 0; k < seen.size(); ++k)
    if (!seen[k])
      throw std::invalid_argument("head: class " + std::to_string(k) +
                                  " absent from training set");
}

template <typename GradFn>
LinearHead train_linear(const FeatureSet& fs, const HeadConfig& cfg, HeadKind kind,
                        GradFn&& batch_grad) {
  fs.validate();
  cfg.validate();
  check_all_classes_present(fs);
  const std::size_t n = fs.count(), d = fs.dim(), k = fs.class_count;

  LinearHead head;
  head.kind = kind;
  head.W = Tensor::zeros({d, k});
  head.b = Tensor::zeros({k});

  Prng rng(derive_seed(cfg.seed, "head-shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Tensor gW({d, k}), gb({k});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
    for (std::size_t at = 0; at < n; at += cfg.batch_size) {
      const std::size_t stop = std::min(n, at + cfg.batch_size);
      gW.fill(0.0);
      gb.fill(0.0);
      batch_grad(head, order, at, stop, gW, gb);
      const double inv = 1.0 / static_cast<double>(stop - at);
      for (std::size_t j = 0; j < head.W.size(); ++j)
        head.W[j] -= cfg.lr * (gW[j] * inv + cfg.l2 * head.W[j]);
      for (std::size_t j = 0; j < head.b.size(); ++j) head.b[j] -= cfg.lr * gb[j] * inv;
    }
  }
  return head;
}

}  // namespace head_detail

// Multinomial logistic regression: cross-entropy plus l2/2 * |W|^2.
inline LinearHead train_softmax_head(const FeatureSet& fs, const HeadConfig& cfg) {
  const std::size_t k = fs.class_count;
  return head_detail::train_linear(
      fs, cfg, HeadKind::Softmax,
      [&](LinearHead& head, const std::vector<std::size_t>& order, std::size_t at,
          std::size_t stop, Tensor& gW, Tensor& gb) {
        for (std::size_t i = at; i < stop; ++i) {
          const std::size_t row = order[i];
          std::vector<double> p(k);
          double mx = -1e300;
          for (std::size_t c = 0; c < k; ++c) {
            double s = head.b[c];
            for (std::size_t j = 0; j < fs.dim(); ++j)
              s += fs.features(row, j) * head.W(j, c);
            p[c] = s;
            mx = std::max(mx, s);
          }
          double sum = 0.0;
          for (std::size_t c = 0; c < k; ++c) {
            p[c] = std::exp(p[c] - mx);
            sum += p[c];
          }
          for (std::size_t c = 0; c < k; ++c) {
            const double delta =
                p[c] / sum - (static_cast<int>(c) == fs.labels[row] ? 1.0 : 0.0);
            gb[c] += delta;
            for (std::size_t j = 0; j < fs.dim(); ++j)
              gW(j, c) += delta * fs.features(row, j);
          }
        }
      });
}

// One-vs-rest linear SVM: mean hinge loss per class plus l2/2 * |W|^2,
// trained by subgradient descent.
inline LinearHead train_svm_head(const FeatureSet& fs, const HeadConfig& cfg) {
  const std::size_t k = fs.class_count;
  return head_detail::train_linear(
      fs, cfg, HeadKind::Svm,
      [&](LinearHead& head, const std::vector<std::size_t>& order, std::size_t at,
          std::size_t stop, Tensor& gW, Tensor& gb) {
        for (std::size_t i = at; i < stop; ++i) {
          const std::size_t row = order[i];
          for (std::size_t c = 0; c < k; ++c) {
            double margin = head.b[c];
            for (std::size_t j = 0; j < fs.dim(); ++j)
              margin += fs.features(row, j) * head.W(j, c);
            const double y = static_cast<int>(c) == fs.labels[row] ? 1.0 : -1.0;
            if (1.0 - y * margin > 0.0) {
              gb[c] += -y;
              for (std::size_t j = 0; j < fs.dim(); ++j)
                gW(j, c) += -y * fs.features(row, j);
            }
          }
        }
      });
}

inline void save_head(const LinearHead& head, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os.write("HEAD", 4);
  detail::put_u32(os, 1);
  os.put(head.kind == HeadKind::Softmax ? 0 : 1);
  detail::put_u32(os, static_cast<std::uint32_t>(head.dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(head.class_count()));
  for (std::size_t i = 0; i < head.W.size(); ++i) detail::put_f64(os, head.W[i]);
  for (std::size_t i = 0; i < head.b.size(); ++i) detail::put_f64(os, head.b[i]);
  if (!os) throw std::runtime_error(path + ": write failed");
}

inline LinearHead load_head(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "HEAD")
    throw std::runtime_error(path + ": bad magic, want HEAD");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw std::runtime_error(path + ": unsupported head format version " +
                             std::to_string(version));
  const int kind = is.get();
  const std::uint32_t d = detail::get_u32(is);
  const std::uint32_t k = detail::get_u32(is);
  if (d == 0 || k == 0) throw std::runtime_error(path + ": zero head dimensions");
  LinearHead head;
  head.kind = kind == 0 ? HeadKind::Softmax : HeadKind::Svm;
  head.W = Tensor({d, k});
  head.b = Tensor({k});
  for (std::size_t i = 0; i < head.W.size(); ++i) head.W[i] = detail::get_f64(is);
  for (std::size_t i = 0; i < head.b.size(); ++i) head.b[i] = detail::get_f64(is);
  return head;
}

}  // namespace dentnet
