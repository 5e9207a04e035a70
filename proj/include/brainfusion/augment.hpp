#pragma once

#include <cstdint>
#include <random>

#include "brainfusion/image.hpp"

namespace brainfusion {

enum class FillMode { nearest };
enum class FlipAxis { horizontal, vertical };

struct AugmentationPolicy {
  double shear_limit = 0.3;
  double zoom_limit = 0.3;
  bool hflip = true;
  bool vflip = true;
  FillMode fill = FillMode::nearest;

  /// Throws ConfigError unless both limits are in [0,1).
  void validate() const;
};

/// Horizontal shear about the image center: output(x, y) samples the input
/// at x - factor * (y - cy). Throws ConfigError when |factor| > limit.
ImageTensor shear(const ImageTensor& img, double factor, double limit = 0.3,
                  FillMode fill = FillMode::nearest);

/// Center-anchored scaling; scale > 1 magnifies, scale < 1 shrinks the
/// content and fills the border from the nearest valid pixel.
ImageTensor zoom(const ImageTensor& img, double scale, double limit = 0.3,
                 FillMode fill = FillMode::nearest);

/// Horizontal reverses columns, vertical reverses rows.
ImageTensor flip(const ImageTensor& img, FlipAxis axis);

/// Uniform double in [0,1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

struct AugmentDraw {
  double shear_factor;
  double zoom_scale;
  bool hflip;
  bool vflip;
};

/// Consumes exactly four draws regardless of the policy.
AugmentDraw draw_augmentation(const AugmentationPolicy& policy, std::mt19937_64& rng);

/// shear -> zoom -> flips with parameters from draw_augmentation.
ImageTensor random_augment(const ImageTensor& img, const AugmentationPolicy& policy,
                           std::mt19937_64& rng);

}  // namespace brainfusion
