#include "brainfusion/box.hpp"

#include <algorithm>

namespace brainfusion {

bool is_valid(const Box& b) noexcept {
  const bool center_ok = b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0;
  const bool size_ok = b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0;
  const bool conf_ok = !b.confidence || (*b.confidence >= 0.0 && *b.confidence <= 1.0);
  return center_ok && size_ok && conf_ok;
}

Box clip(const Box& b) noexcept {
  if (b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= 1.0 && b.y2() <= 1.0) return b;
  return box_from_corners(b.class_id, std::clamp(b.x1(), 0.0, 1.0), std::clamp(b.y1(), 0.0, 1.0),
                          std::clamp(b.x2(), 0.0, 1.0), std::clamp(b.y2(), 0.0, 1.0),
                          b.confidence);
}

Box box_from_corners(ClassLabel c, double x1, double y1, double x2, double y2,
                     std::optional<double> confidence) noexcept {
  Box b;
  b.class_id = c;
  b.cx = (x1 + x2) / 2;
  b.cy = (y1 + y2) / 2;
  b.w = x2 - x1;
  b.h = y2 - y1;
  b.confidence = confidence;
  return b;
}

PixelRect denormalize(const Box& b, int width, int height) noexcept {
  return {b.x1() * width, b.y1() * height, b.x2() * width, b.y2() * height};
}

Box normalize_rect(ClassLabel c, const PixelRect& r, int width, int height,
                   std::optional<double> confidence) noexcept {
  return box_from_corners(c, r.x1 / width, r.y1 / height, r.x2 / width, r.y2 / height,
                          confidence);
}

}  // namespace brainfusion
