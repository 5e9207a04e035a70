#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "brainfusion/box.hpp"
#include "brainfusion/image.hpp"
#include "brainfusion/labels.hpp"

namespace brainfusion {

/// Per-pixel relevance in [0,1] at the resolution of the explained image.
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major
  ClassLabel target_class = ClassLabel::glioma;

  float at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  float max_value() const noexcept;
  float min_value() const noexcept;

  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

enum class Colormap { viridis, inferno, jet };

/// Rendered image plus the text of every caption drawn on it.
struct OverlayImage {
  ImageTensor image;
  std::vector<std::string> captions;
};

/// Colormap lookup applied to `hm` quantized to 8 bits; RGB in [0,1].
ImageTensor colorize(const Heatmap& hm, Colormap cmap = Colormap::viridis);

/// out = (1 - alpha) * img + alpha * colorize(hm), clipped to [0,1].
/// Throws ShapeError on a size mismatch, ConfigError for alpha outside [0,1].
OverlayImage render_heatmap_overlay(const ImageTensor& img, const Heatmap& hm, double alpha,
                                    Colormap cmap = Colormap::viridis);

/// "<class> <confidence>" with two decimals, e.g. "glioma 0.87".
std::string detection_caption(const Detection& d);

/// Fixed outline color per class, RGB in [0,1].
std::array<float, 3> class_color(ClassLabel c) noexcept;

/// Draws each box as a 2-pixel outline starting at the rounded top-left
/// pixel corner and ending at the rounded bottom-right one (clamped to the
/// last row/column), with its caption above the box, or just inside it
/// when there is no room above.
OverlayImage render_box_overlay(const ImageTensor& img, std::span<const Detection> dets);

/// Text grid: a header line "height width class", then one line per row of
/// space-separated values with 6 decimals.
void write_heatmap_grid(const Heatmap& hm, const std::filesystem::path& path);
/// Throws ParseError on malformed input.
Heatmap read_heatmap_grid(const std::filesystem::path& path);

}  // namespace brainfusion
