#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/prng.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

struct AugmentSpec {
  double rot_min_deg = -20.0;
  double rot_max_deg = 20.0;
  double flip_prob = 0.5;
  std::vector<std::size_t> target_counts;  // per class; empty until set
  std::uint64_t seed = 1;

  void validate() const {
    if (!(rot_min_deg <= rot_max_deg))
      throw std::invalid_argument("augment: rotation bounds out of order");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
      throw std::invalid_argument("augment: flip probability must be in [0,1]");
  }
};

// Rotation about the image center with bilinear resampling; pixels sampled
// from outside the frame take the nearest edge value.
inline Tensor rotate_bilinear(const Tensor& img, double degrees) {
  if (img.rank() != 3)
    throw std::invalid_argument("rotate: image must be HxWxC, got " + shape_str(img.shape()));
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: rotate the output coordinate back into the source.
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      double sx = cx + cs * dx + sn * dy;
      double sy = cy - sn * dx + cs * dy;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(w) - 1.0);
      sy = std::min(std::max(sy, 0.0), static_cast<double>(h) - 1.0);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = img(y0, x0, ch) * (1.0 - fx) + img(y0, x1, ch) * fx;
        const double bot = img(y1, x0, ch) * (1.0 - fx) + img(y1, x1, ch) * fx;
        out(y, x, ch) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

inline Tensor hflip(const Tensor& img) {
  if (img.rank() != 3)
    throw std::invalid_argument("hflip: image must be HxWxC, got " + shape_str(img.shape()));
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out(y, x, ch) = img(y, w - 1 - x, ch);
  return out;
}

// One random draw: rotation angle first, then the flip coin.
inline Tensor augment_one(const Tensor& img, const AugmentSpec& spec, Prng& rng) {
  spec.validate();
  const double theta = rng.uniform(spec.rot_min_deg, spec.rot_max_deg);
  Tensor out = rotate_bilinear(img, theta);
  if (rng.bernoulli(spec.flip_prob)) out = hflip(out);
  return out;
}

// Tops one class up to target by augmenting originals round-robin:
// copy j comes from original j % n. Each copy gets its own generator
// derived from (seed, id, copy index) so generation order cannot matter.
// sink(copy, source_index, copy_index) receives copies in index order.
inline void augment_class_to_count(
    const std::vector<Tensor>& originals, const std::vector<std::string>& ids,
    std::size_t target, const AugmentSpec& spec,
    const std::function<void(Tensor, std::size_t, std::size_t)>& sink) {
  spec.validate();
  const std::size_t n = originals.size();
  if (n == 0) throw std::invalid_argument("augment: class has no originals");
  if (ids.size() != n)
    throw std::invalid_argument("augment: " + std::to_string(ids.size()) + " ids for " +
                                std::to_string(n) + " originals");
  if (target < n)
    throw std::invalid_argument("augment: target " + std::to_string(target) +
                                " is below the original count " + std::to_string(n));
  for (std::size_t j = 0; j < target - n; ++j) {
    const std::size_t src = j % n;
    Prng rng(derive_seed(spec.seed, ids[src] + "#" + std::to_string(j / n)));
    sink(augment_one(originals[src], spec, rng), src, j);
  }
}

struct AugmentedSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

// Originals first (in input order), then per-class augmented copies. Per
// class c the result holds exactly spec.target_counts[c] images.
inline AugmentedSet augment_to_counts(const std::vector<Tensor>& images,
                                      const std::vector<int>& labels, std::size_t class_count,
                                      const AugmentSpec& spec) {
  spec.validate();
  if (images.size() != labels.size())
    throw std::invalid_argument("augment: " + std::to_string(images.size()) + " images vs " +
                                std::to_string(labels.size()) + " labels");
  if (spec.target_counts.size() != class_count)
    throw std::invalid_argument("augment: " + std::to_string(spec.target_counts.size()) +
                                " target counts for " + std::to_string(class_count) +
                                " classes");
  AugmentedSet out;
  out.images = images;
  out.labels = labels;
  for (std::size_t c = 0; c < class_count; ++c) {
    std::vector<Tensor> originals;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (labels[i] == static_cast<int>(c)) {
        originals.push_back(images[i]);
        ids.push_back("c" + std::to_string(c) + "i" + std::to_string(i));
      }
    }
    augment_class_to_count(originals, ids, spec.target_counts[c], spec,
                           [&](Tensor copy, std::size_t, std::size_t) {
                             out.images.push_back(std::move(copy));
                             out.labels.push_back(static_cast<int>(c));
                           });
  }
  return out;
}

}  // namespace dentnet
