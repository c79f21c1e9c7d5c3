#pragma once

#include <algorithm>
#include <cstddef>

namespace dentnet {

// Axis-aligned pixel rectangle, top-left origin, w/h in pixels.
struct Rect {
  std::size_t x = 0, y = 0, w = 0, h = 0;

  bool empty() const { return w == 0 || h == 0; }
  std::size_t area() const { return w * h; }
  std::size_t right() const { return x + w; }
  std::size_t bottom() const { return y + h; }

  bool contains(std::size_t px, std::size_t py) const {
    return px >= x && px < right() && py >= y && py < bottom();
  }

  bool operator==(const Rect& o) const = default;
};

inline Rect rect_union(const Rect& a, const Rect& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  const std::size_t x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
  const std::size_t x1 = std::max(a.right(), b.right()), y1 = std::max(a.bottom(), b.bottom());
  return {x0, y0, x1 - x0, y1 - y0};
}

inline std::size_t intersection_area(const Rect& a, const Rect& b) {
  const std::size_t x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const std::size_t x1 = std::min(a.right(), b.right()), y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return 0;
  return (x1 - x0) * (y1 - y0);
}

inline double iou(const Rect& a, const Rect& b) {
  const std::size_t inter = intersection_area(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dentnet
