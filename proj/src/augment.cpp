#include "brainfusion/augment.hpp"

#include <fmt/format.h>

#include <cmath>

#include "brainfusion/error.hpp"

namespace brainfusion {

void AugmentationPolicy::validate() const {
  if (shear_limit < 0.0 || shear_limit >= 1.0) throw ConfigError("shear_limit must be in [0,1)");
  if (zoom_limit < 0.0 || zoom_limit >= 1.0) throw ConfigError("zoom_limit must be in [0,1)");
}

namespace {

/// Resamples `img` where output pixel (y, x) reads input at map(y, x).
template <typename Map>
ImageTensor remap(const ImageTensor& img, Map map) {
  ImageTensor out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto [sy, sx] = map(y, x);
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        out.at(y, x, c) = sample_bilinear_clamped(img, sy, sx, c);
      }
    }
  }
  return out;
}

}  // namespace

ImageTensor shear(const ImageTensor& img, double factor, double limit, FillMode) {
  if (std::abs(factor) > limit) {
    throw ConfigError(fmt::format("shear factor {} exceeds limit {}", factor, limit));
  }
  if (factor == 0.0) return img;
  const double cy = (img.height() - 1) / 2.0;
  return remap(img, [&](int y, int x) {
    return std::pair<double, double>{y, x - factor * (y - cy)};
  });
}

ImageTensor zoom(const ImageTensor& img, double scale, double limit, FillMode) {
  if (scale < 1.0 - limit - 1e-12 || scale > 1.0 + limit + 1e-12 || scale <= 0.0) {
    throw ConfigError(fmt::format("zoom scale {} outside [{}, {}]", scale, 1.0 - limit, 1.0 + limit));
  }
  if (scale == 1.0) return img;
  const double cy = (img.height() - 1) / 2.0;
  const double cx = (img.width() - 1) / 2.0;
  return remap(img, [&](int y, int x) {
    return std::pair<double, double>{cy + (y - cy) / scale, cx + (x - cx) / scale};
  });
}

ImageTensor flip(const ImageTensor& img, FlipAxis axis) {
  ImageTensor out(img.height(), img.width());
  const int h = img.height();
  const int w = img.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = axis == FlipAxis::vertical ? h - 1 - y : y;
      const int sx = axis == FlipAxis::horizontal ? w - 1 - x : x;
      for (int c = 0; c < ImageTensor::kChannels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

AugmentDraw draw_augmentation(const AugmentationPolicy& policy, std::mt19937_64& rng) {
  AugmentDraw d;
  d.shear_factor = uniform(rng, -policy.shear_limit, policy.shear_limit);
  d.zoom_scale = uniform(rng, 1.0 - policy.zoom_limit, 1.0 + policy.zoom_limit);
  d.hflip = uniform01(rng) < 0.5 && policy.hflip;
  d.vflip = uniform01(rng) < 0.5 && policy.vflip;
  return d;
}

ImageTensor random_augment(const ImageTensor& img, const AugmentationPolicy& policy,
                           std::mt19937_64& rng) {
  policy.validate();
  const auto d = draw_augmentation(policy, rng);
  ImageTensor out = shear(img, d.shear_factor, policy.shear_limit, policy.fill);
  out = zoom(out, d.zoom_scale, policy.zoom_limit, policy.fill);
  if (d.hflip) out = flip(out, FlipAxis::horizontal);
  if (d.vflip) out = flip(out, FlipAxis::vertical);
  return out;
}

}  // namespace brainfusion
