#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/dataset.hpp"
#include "dentnet/geometry.hpp"
#include "dentnet/image_io.hpp"
#include "dentnet/prng.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

// Procedural stand-in corpus: a painted car-panel background plus one
// class-distinctive overlay per image. Class cues are chosen to survive
// horizontal flips and small rotations: vertical band, color and texture,
// never left/right position.
inline const std::vector<std::string>& damage_class_names() {
  static const std::vector<std::string> names = {
      "bumper_dent",     "door_dent",        "glass_shatter", "head_lamp_broken",
      "tail_lamp_broken", "scratch",          "smash",         "no_damage"};
  return names;
}

constexpr int kNoDamageLabel = 7;

struct SynthConfig {
  std::size_t per_class = 50;
  std::size_t size = 64;
  std::uint64_t seed = 7;

  void validate() const {
    if (size < 32) throw std::invalid_argument("synth: size must be at least 32");
    if (per_class == 0) throw std::invalid_argument("synth: per_class must be positive");
  }
};

struct SynthImage {
  Tensor pixels{{1, 1, 1}};
  int label = 0;
  std::string id;
  Rect bbox;                      // tight box of overlay pixels; empty for no_damage
  std::vector<std::size_t> mask;  // flat y*size+x of overlay pixels
};

namespace synth_detail {

struct Canvas {
  std::size_t s;
  Tensor px;
  std::vector<unsigned char> hit;

  explicit Canvas(std::size_t size) : s(size), px({size, size, 3}), hit(size * size, 0) {}

  void put(long y, long x, double r, double g, double b) {
    if (y < 0 || x < 0 || y >= static_cast<long>(s) || x >= static_cast<long>(s)) return;
    const std::size_t yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
    px(yy, xx, 0) = r;
    px(yy, xx, 1) = g;
    px(yy, xx, 2) = b;
    hit[yy * s + xx] = 1;
  }

  void scale(long y, long x, double f) {
    if (y < 0 || x < 0 || y >= static_cast<long>(s) || x >= static_cast<long>(s)) return;
    const std::size_t yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
    for (std::size_t c = 0; c < 3; ++c) px(yy, xx, c) *= f;
    hit[yy * s + xx] = 1;
  }
};

inline void paint_background(Canvas& cv, Prng& rng) {
  const double base_r = rng.uniform(0.45, 0.7);
  const double base_g = rng.uniform(0.45, 0.7);
  const double base_b = rng.uniform(0.45, 0.7);
  const double grad = rng.uniform(-0.08, 0.08);
  const double fx = rng.uniform(0.5, 2.0) / static_cast<double>(cv.s);
  const double fy = rng.uniform(0.5, 2.0) / static_cast<double>(cv.s);
  const double phase = rng.uniform(0.0, 6.28318530717958648);
  for (std::size_t y = 0; y < cv.s; ++y) {
    for (std::size_t x = 0; x < cv.s; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(cv.s - 1);
      const double ripple =
          0.02 * std::sin(6.28318530717958648 * (fx * static_cast<double>(x) +
                                                 fy * static_cast<double>(y)) +
                          phase);
      const double wobble = rng.uniform(-0.005, 0.005);
      const double lum = grad * (u - 0.5) + ripple + wobble;
      cv.px(y, x, 0) = base_r + lum;
      cv.px(y, x, 1) = base_g + lum;
      cv.px(y, x, 2) = base_b + lum;
    }
  }
}

// Soft-edged darkening ellipse. Factor f is the value at the center,
// fading to 1 at the rim.
inline void paint_dent(Canvas& cv, double cx, double cy, double hx, double hy, double f) {
  const long y0 = static_cast<long>(std::floor(cy - hy)), y1 = static_cast<long>(std::ceil(cy + hy));
  const long x0 = static_cast<long>(std::floor(cx - hx)), x1 = static_cast<long>(std::ceil(cx + hx));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double dy = (static_cast<double>(y) - cy) / hy;
      const double dx = (static_cast<double>(x) - cx) / hx;
      const double d2 = dx * dx + dy * dy;
      if (d2 > 1.0) continue;
      cv.scale(y, x, 1.0 - (1.0 - f) * (1.0 - d2));
    }
}

// Stamp a disk of the given radius at every step along the segment.
inline void paint_line(Canvas& cv, double x0, double y0, double x1, double y1, double r,
                       double g, double b, long width) {
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const long steps = std::max(1L, static_cast<long>(std::ceil(len * 2.0)));
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    const double px = x0 + (x1 - x0) * t;
    const double py = y0 + (y1 - y0) * t;
    for (long dy = -width / 2; dy <= width / 2; ++dy)
      for (long dx = -width / 2; dx <= width / 2; ++dx)
        cv.put(static_cast<long>(std::lround(py)) + dy, static_cast<long>(std::lround(px)) + dx,
               r, g, b);
  }
}

inline void paint_crack_web(Canvas& cv, Prng& rng, double cx, double cy, double hx, double hy,
                            long width) {
  const std::size_t rays = 7 + rng.next_below(4);
  for (std::size_t k = 0; k < rays; ++k) {
    const double ang = 6.28318530717958648 * static_cast<double>(k) /
                           static_cast<double>(rays) +
                       rng.uniform(-0.15, 0.15);
    double x = cx, y = cy;
    const std::size_t segs = 3;
    for (std::size_t sgm = 1; sgm <= segs; ++sgm) {
      const double t = static_cast<double>(sgm) / static_cast<double>(segs);
      const double jitter = rng.uniform(-0.06, 0.06);
      const double nx = cx + (hx * t) * std::cos(ang + jitter);
      const double ny = cy + (hy * t) * std::sin(ang + jitter);
      paint_line(cv, x, y, nx, ny, 0.92, 0.95, 0.98, width);
      x = nx;
      y = ny;
    }
  }
  // Impact ring along the rim pins the web's spatial extent.
  const std::size_t ring_steps = static_cast<std::size_t>(16.0 * (hx + hy));
  for (std::size_t i = 0; i < ring_steps; ++i) {
    const double a = 6.28318530717958648 * static_cast<double>(i) /
                     static_cast<double>(ring_steps);
    cv.put(static_cast<long>(std::lround(cy + hy * std::sin(a))),
           static_cast<long>(std::lround(cx + hx * std::cos(a))), 0.92, 0.95, 0.98);
  }
  paint_dent(cv, cx, cy, std::max(2.0, hx * 0.12), std::max(2.0, hy * 0.12), 0.3);
}

inline void paint_lamp(Canvas& cv, Prng& rng, double cx, double cy, double hx, double hy,
                       double r, double g, double b, bool bright_cracks, long width) {
  const long y0 = static_cast<long>(std::lround(cy - hy)), y1 = static_cast<long>(std::lround(cy + hy));
  const long x0 = static_cast<long>(std::lround(cx - hx)), x1 = static_cast<long>(std::lround(cx + hx));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const bool border = y == y0 || y == y1 || x == x0 || x == x1;
      if (border)
        cv.put(y, x, 0.08, 0.08, 0.08);
      else
        cv.put(y, x, r, g, b);
    }
  const double cr = bright_cracks ? 0.95 : 0.1;
  const std::size_t cracks = 2 + rng.next_below(2);
  for (std::size_t k = 0; k < cracks; ++k) {
    const double ax = rng.uniform(cx - hx * 0.9, cx + hx * 0.9);
    const double bx = rng.uniform(cx - hx * 0.9, cx + hx * 0.9);
    paint_line(cv, ax, static_cast<double>(y0) + 1.0, bx, static_cast<double>(y1) - 1.0, cr, cr,
               cr, width);
  }
}

inline void paint_scratch(Canvas& cv, Prng& rng, double cx, double cy, double hx, double hy,
                          long width) {
  const bool rising = rng.bernoulli(0.5);
  const double sy = rising ? 1.0 : -1.0;
  double x = cx - hx, y = cy - sy * hy;
  const std::size_t segs = 6;
  for (std::size_t sgm = 1; sgm <= segs; ++sgm) {
    const double t = static_cast<double>(sgm) / static_cast<double>(segs);
    const double nx = cx - hx + 2.0 * hx * t;
    const double ny = cy - sy * hy + sy * 2.0 * hy * t +
                      (sgm == segs ? 0.0 : rng.uniform(-0.1, 0.1) * hy);
    paint_line(cv, x, y, nx, ny, 0.95, 0.93, 0.88, width);
    x = nx;
    y = ny;
  }
}

inline void paint_smash(Canvas& cv, Prng& rng, double cx, double cy, double hx, double hy) {
  const long y0 = static_cast<long>(std::floor(cy - hy)), y1 = static_cast<long>(std::ceil(cy + hy));
  const long x0 = static_cast<long>(std::floor(cx - hx)), x1 = static_cast<long>(std::ceil(cx + hx));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double dy = (static_cast<double>(y) - cy) / hy;
      const double dx = (static_cast<double>(x) - cx) / hx;
      if (dx * dx + dy * dy > 1.0) continue;
      cv.scale(y, x, rng.uniform(0.3, 1.25));
    }
}

}  // namespace synth_detail

inline std::string synth_image_id(int label, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", index);
  return damage_class_names()[static_cast<std::size_t>(label)] + "_" + buf;
}

// Deterministic per image: everything derives from (master_seed, id), so
// images can be generated in any order or in parallel.
inline SynthImage synth_image(int label, std::size_t index, std::size_t size,
                              std::uint64_t master_seed) {
  if (label < 0 || label >= static_cast<int>(damage_class_names().size()))
    throw std::invalid_argument("synth: label " + std::to_string(label) + " out of range");
  if (size < 32) throw std::invalid_argument("synth: size must be at least 32");
  SynthImage out;
  out.label = label;
  out.id = synth_image_id(label, index);
  Prng rng(derive_seed(master_seed, out.id));

  synth_detail::Canvas cv(size);
  synth_detail::paint_background(cv, rng);

  const double s = static_cast<double>(size);
  const long width = std::max(1L, static_cast<long>(std::lround(s / 100.0)));
  const double cx = rng.uniform(0.35, 0.65) * s;
  const double hx = rng.uniform(0.19, 0.23) * s;
  const double hy = rng.uniform(0.19, 0.23) * s;
  switch (label) {
    case 0:  // dark dent low on the panel
      paint_dent(cv, cx, rng.uniform(0.72, 0.78) * s, hx, hy, rng.uniform(0.38, 0.5));
      break;
    case 1:  // shallower dent at mid height
      paint_dent(cv, cx, rng.uniform(0.44, 0.52) * s, hx, hy, rng.uniform(0.58, 0.72));
      break;
    case 2:  // pale radial crack web
      synth_detail::paint_crack_web(cv, rng, cx, rng.uniform(0.3, 0.5) * s, hx, hy, width);
      break;
    case 3:  // pale warm lamp block high up, dark cracks
      synth_detail::paint_lamp(cv, rng, cx, rng.uniform(0.2, 0.28) * s, hx, hy, 0.88, 0.82,
                               0.55, false, width);
      break;
    case 4:  // red lamp block below the midline, bright cracks
      synth_detail::paint_lamp(cv, rng, cx, rng.uniform(0.6, 0.68) * s, hx, hy, 0.72, 0.12,
                               0.12, true, width);
      break;
    case 5:  // thin bright diagonal polyline
      synth_detail::paint_scratch(cv, rng, cx, rng.uniform(0.38, 0.62) * s, hx, hy, width);
      break;
    case 6:  // high-frequency crumple speckle
      synth_detail::paint_smash(cv, rng, cx, rng.uniform(0.38, 0.62) * s, hx, hy);
      break;
    default:  // no_damage
      break;
  }

  for (std::size_t i = 0; i < cv.px.size(); ++i)
    cv.px[i] = std::min(std::max(cv.px[i], 0.0), 1.0);

  std::size_t min_x = size, min_y = size, max_x = 0, max_y = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (cv.hit[y * size + x]) {
        out.mask.push_back(y * size + x);
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
      }
  if (!out.mask.empty()) out.bbox = {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
  out.pixels = std::move(cv.px);
  return out;
}

struct SynthCorpus {
  std::vector<SynthImage> images;  // class-major, per_class each
  DatasetManifest manifest;
};

inline SynthCorpus make_synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus out;
  out.manifest.class_names = damage_class_names();
  for (int label = 0; label < static_cast<int>(damage_class_names().size()); ++label)
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      out.images.push_back(synth_image(label, i, cfg.size, cfg.seed));
      out.manifest.entries.push_back(
          {out.images.back().id, damage_class_names()[static_cast<std::size_t>(label)], ""});
    }
  return out;
}

// Ground-truth overlay boxes, one row per image: id class x y w h.
inline void write_regions(const std::string& path, const std::vector<SynthImage>& images) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "id\tclass\tx\ty\tw\th\n";
  for (const auto& im : images)
    os << im.id << "\t" << damage_class_names()[static_cast<std::size_t>(im.label)] << "\t"
       << im.bbox.x << "\t" << im.bbox.y << "\t" << im.bbox.w << "\t" << im.bbox.h << "\n";
  if (!os) throw std::runtime_error(path + ": write failed");
}

// Writes <root>/<class>/<id>.ppm for every image plus manifest.tsv and
// regions.tsv. Returns the manifest (split column empty).
inline DatasetManifest write_synth_corpus(const std::string& root, const SynthConfig& cfg) {
  SynthCorpus corpus = make_synth_corpus(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (const auto& cls : damage_class_names()) fs::create_directories(root + "/" + cls);
  for (const auto& im : corpus.images)
    write_image(root + "/" + damage_class_names()[static_cast<std::size_t>(im.label)] + "/" +
                    im.id + ".ppm",
                im.pixels);
  write_manifest(root + "/manifest.tsv", corpus.manifest);
  write_regions(root + "/regions.tsv", corpus.images);
  return corpus.manifest;
}

}  // namespace dentnet
