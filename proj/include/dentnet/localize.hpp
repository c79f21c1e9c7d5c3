#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/geometry.hpp"
#include "dentnet/ops.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

struct LocalizeConfig {
  std::size_t window = 100;
  std::size_t resize_to = 224;
  std::size_t stride = 10;
  double threshold = 0.9;
  std::vector<int> classes_of_interest;  // empty = every class

  void validate() const {
    if (window == 0 || resize_to == 0 || stride == 0)
      throw std::invalid_argument("localize: window, resize_to and stride must be positive");
    if (!(threshold > 0.0 && threshold <= 1.0))
      throw std::invalid_argument("localize: threshold must be in (0,1]");
  }
};

// The classifier sees the resized crop and the source rectangle it came
// from; it returns one probability per class.
using CropClassifier = std::function<std::vector<double>(const Tensor&, const Rect&)>;

struct HeatmapSet {
  std::size_t image_h = 0, image_w = 0;
  std::size_t window = 0, stride = 0;
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t class_count = 0;
  Tensor grid{{1, 1, 1}};  // [class x grid_h x grid_w]

  double at(std::size_t cls, std::size_t gy, std::size_t gx) const {
    return grid(cls, gy, gx);
  }

  // Source rectangle of a grid cell: window x window centered at the grid
  // point, clamped so the crop stays inside the image.
  Rect cell_rect(std::size_t gy, std::size_t gx) const {
    const std::size_t half = window / 2;
    auto clamp_origin = [&](std::size_t center, std::size_t limit) {
      const std::size_t want = center > half ? center - half : 0;
      return std::min(want, limit - window);
    };
    return {clamp_origin(gx * stride, image_w), clamp_origin(gy * stride, image_h), window,
            window};
  }
};

// Crop-resize-classify every grid position. Grid points sit at multiples
// of stride; stride 1 visits every pixel.
inline HeatmapSet sliding_window_map(const Tensor& image, const CropClassifier& classifier,
                                     const LocalizeConfig& cfg) {
  cfg.validate();
  if (image.rank() != 3)
    throw std::invalid_argument("localize: image must be HxWxC, got " +
                                shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h < cfg.window || w < cfg.window)
    throw std::invalid_argument("localize: image " + std::to_string(w) + "x" +
                                std::to_string(h) + " smaller than window " +
                                std::to_string(cfg.window));

  HeatmapSet hm;
  hm.image_h = h;
  hm.image_w = w;
  hm.window = cfg.window;
  hm.stride = cfg.stride;
  hm.grid_h = (h + cfg.stride - 1) / cfg.stride;
  hm.grid_w = (w + cfg.stride - 1) / cfg.stride;

  for (std::size_t gy = 0; gy < hm.grid_h; ++gy) {
    for (std::size_t gx = 0; gx < hm.grid_w; ++gx) {
      const Rect r = hm.cell_rect(gy, gx);
      Tensor crop({cfg.window, cfg.window, c});
      for (std::size_t y = 0; y < cfg.window; ++y)
        for (std::size_t x = 0; x < cfg.window; ++x)
          for (std::size_t ch = 0; ch < c; ++ch)
            crop(y, x, ch) = image(r.y + y, r.x + x, ch);
      const Tensor resized = cfg.resize_to == cfg.window
                                 ? crop
                                 : bilinear_resize(crop, cfg.resize_to, cfg.resize_to);
      const std::vector<double> probs = classifier(resized, r);
      if (probs.empty()) throw std::runtime_error("localize: classifier returned no classes");
      if (hm.class_count == 0) {
        hm.class_count = probs.size();
        hm.grid = Tensor::zeros({hm.class_count, hm.grid_h, hm.grid_w});
      } else if (probs.size() != hm.class_count) {
        throw std::runtime_error("localize: classifier class count changed between crops");
      }
      for (std::size_t cls = 0; cls < hm.class_count; ++cls)
        hm.grid(cls, gy, gx) = probs[cls];
    }
  }
  return hm;
}

struct Region {
  Rect bbox;
  int label = 0;
  double peak = 0.0;
};

// Cells at or above the threshold, grouped per class by 4-connectivity.
// Each component becomes one Region: the tight union of its cells' window
// footprints, scored by the component's peak probability. Regions come
// out class-major, components in row-major discovery order.
inline std::vector<Region> threshold_regions(const HeatmapSet& hm, const LocalizeConfig& cfg) {
  cfg.validate();
  std::vector<int> classes = cfg.classes_of_interest;
  if (classes.empty())
    for (std::size_t c = 0; c < hm.class_count; ++c) classes.push_back(static_cast<int>(c));

  std::vector<Region> regions;
  std::vector<char> seen(hm.grid_h * hm.grid_w);
  for (int cls : classes) {
    if (cls < 0 || cls >= static_cast<int>(hm.class_count))
      throw std::invalid_argument("localize: class " + std::to_string(cls) + " outside [0," +
                                  std::to_string(hm.class_count) + ")");
    std::fill(seen.begin(), seen.end(), 0);
    const auto hot = [&](std::size_t gy, std::size_t gx) {
      return hm.at(static_cast<std::size_t>(cls), gy, gx) >= cfg.threshold;
    };
    for (std::size_t gy = 0; gy < hm.grid_h; ++gy) {
      for (std::size_t gx = 0; gx < hm.grid_w; ++gx) {
        if (!hot(gy, gx) || seen[gy * hm.grid_w + gx]) continue;
        Region region;
        region.label = cls;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{gy, gx}};
        seen[gy * hm.grid_w + gx] = 1;
        while (!stack.empty()) {
          const auto [y, x] = stack.back();
          stack.pop_back();
          region.bbox = rect_union(region.bbox, hm.cell_rect(y, x));
          region.peak = std::max(region.peak, hm.at(static_cast<std::size_t>(cls), y, x));
          const std::pair<long, long> steps[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
          for (const auto& [dy, dx] : steps) {
            const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
            if (ny < 0 || nx < 0 || ny >= static_cast<long>(hm.grid_h) ||
                nx >= static_cast<long>(hm.grid_w))
              continue;
            const std::size_t uy = static_cast<std::size_t>(ny),
                              ux = static_cast<std::size_t>(nx);
            if (!hot(uy, ux) || seen[uy * hm.grid_w + ux]) continue;
            seen[uy * hm.grid_w + ux] = 1;
            stack.push_back({uy, ux});
          }
        }
        regions.push_back(std::move(region));
      }
    }
  }
  return regions;
}

// Default region colors, extended with fixed distinct colors for the
// remaining labels.
inline std::map<int, std::array<double, 3>> default_palette() {
  return {
      {0, {1.0, 0.55, 0.0}},  // bumper dent: orange
      {1, {0.6, 0.0, 0.8}},   // door dent: purple
      {2, {1.0, 0.0, 0.0}},   // glass shatter: red
      {3, {1.0, 1.0, 0.0}},   // head lamp: yellow
      {4, {0.0, 1.0, 1.0}},   // tail lamp: cyan
      {5, {0.0, 1.0, 0.0}},   // scratch: green
      {6, {0.0, 0.0, 1.0}},   // smash: blue
      {7, {1.0, 1.0, 1.0}},   // no damage: white
  };
}

// Draws a one-pixel rectangle border per region, in region order (later
// regions paint over earlier ones where borders cross).
inline Tensor render_overlay(const Tensor& image, const std::vector<Region>& regions,
                             const std::map<int, std::array<double, 3>>& palette =
                                 default_palette()) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("overlay: image must be HxWx3, got " +
                                shape_str(image.shape()));
  Tensor out = image;
  const std::size_t h = image.dim(0), w = image.dim(1);
  for (const auto& region : regions) {
    const Rect& r = region.bbox;
    if (r.empty()) continue;
    if (r.right() > w || r.bottom() > h)
      throw std::invalid_argument("overlay: region outside the image");
    auto it = palette.find(region.label);
    const std::array<double, 3> color =
        it != palette.end() ? it->second : std::array<double, 3>{1.0, 0.0, 1.0};
    auto paint = [&](std::size_t y, std::size_t x) {
      for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = color[c];
    };
    for (std::size_t x = r.x; x < r.right(); ++x) {
      paint(r.y, x);
      paint(r.bottom() - 1, x);
    }
    for (std::size_t y = r.y; y < r.bottom(); ++y) {
      paint(y, r.x);
      paint(y, r.right() - 1);
    }
  }
  return out;
}

// Geometry plus per-class grids, one flat row-major array per class.
inline std::string heatmap_json(const HeatmapSet& hm) {
  std::ostringstream os;
  os << "{\"image_w\":" << hm.image_w << ",\"image_h\":" << hm.image_h
     << ",\"window\":" << hm.window << ",\"stride\":" << hm.stride
     << ",\"grid_w\":" << hm.grid_w << ",\"grid_h\":" << hm.grid_h << ",\"classes\":[";
  char buf[32];
  for (std::size_t cls = 0; cls < hm.class_count; ++cls) {
    os << (cls ? ",[" : "[");
    for (std::size_t i = 0; i < hm.grid_h * hm.grid_w; ++i) {
      std::snprintf(buf, sizeof(buf), "%.6g", hm.grid[cls * hm.grid_h * hm.grid_w + i]);
      os << (i ? "," : "") << buf;
    }
    os << "]";
  }
  os << "]}";
  return os.str();
}

}  // namespace dentnet
