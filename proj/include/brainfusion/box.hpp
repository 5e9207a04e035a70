#pragma once

#include <optional>

#include "brainfusion/labels.hpp"

namespace brainfusion {

/// Axis-aligned rectangle in normalized image coordinates (fractions of the
/// image width/height), center + size, as in YOLO label files.
struct Box {
  ClassLabel class_id = ClassLabel::glioma;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::optional<double> confidence;

  double x1() const noexcept { return cx - w / 2; }
  double y1() const noexcept { return cy - h / 2; }
  double x2() const noexcept { return cx + w / 2; }
  double y2() const noexcept { return cy + h / 2; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Detector output: a box whose confidence is always set.
struct Detection {
  Box box;
  double confidence() const noexcept { return box.confidence.value_or(0.0); }

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Corner form in pixels.
struct PixelRect {
  double x1, y1, x2, y2;
};

/// True when 0 <= cx,cy <= 1, 0 < w,h <= 1 and confidence (if any) in [0,1].
bool is_valid(const Box& b) noexcept;

/// Clips the extent [cx +- w/2, cy +- h/2] to [0,1]. Boxes already inside the
/// unit square are returned bit-identical.
Box clip(const Box& b) noexcept;

/// Builds a box from corners in normalized coordinates.
Box box_from_corners(ClassLabel c, double x1, double y1, double x2, double y2,
                     std::optional<double> confidence = std::nullopt) noexcept;

PixelRect denormalize(const Box& b, int width, int height) noexcept;
Box normalize_rect(ClassLabel c, const PixelRect& r, int width, int height,
                   std::optional<double> confidence = std::nullopt) noexcept;

}  // namespace brainfusion
