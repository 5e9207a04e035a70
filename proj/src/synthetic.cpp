#include "brainfusion/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "brainfusion/augment.hpp"
#include "brainfusion/yolo_label.hpp"

namespace brainfusion::synthetic {
namespace fs = std::filesystem;
namespace {

double gaussian(std::mt19937_64& rng) {
  // Box-Muller over uniform01 draws.
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void paint_disc(std::vector<float>& plane, int size, double cx, double cy, double r, float value,
                double soft) {
  const int y0 = std::max(0, static_cast<int>(cy - r - soft - 1));
  const int y1 = std::min(size - 1, static_cast<int>(cy + r + soft + 1));
  const int x0 = std::max(0, static_cast<int>(cx - r - soft - 1));
  const int x1 = std::min(size - 1, static_cast<int>(cx + r + soft + 1));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double m = std::clamp((r - d) / soft + 0.5, 0.0, 1.0);
      auto& p = plane[static_cast<std::size_t>(y) * size + x];
      p = static_cast<float>(p * (1.0 - m) + value * m);
    }
  }
}

}  // namespace

Phantom make_phantom(ClassLabel label, int size, std::mt19937_64& rng) {
  const double s = size / 224.0;
  std::vector<float> plane(static_cast<std::size_t>(size) * size, 0.02f);
  const double cx = size / 2.0 + uniform(rng, -6, 6) * s;
  const double cy = size / 2.0 + uniform(rng, -6, 6) * s;
  const double a = uniform(rng, 80, 92) * s;
  const double b = uniform(rng, 95, 105) * s;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double e = std::pow((x - cx) / a, 2) + std::pow((y - cy) / b, 2);
      auto& p = plane[static_cast<std::size_t>(y) * size + x];
      if (e < 1.0) p = 0.85f;
      if (e < 0.9) p = 0.35f;
      if (e < 1.0) p += static_cast<float>(0.04 * gaussian(rng));
    }
  }

  Box box = box_from_corners(label, (cx - a) / size, (cy - b) / size, (cx + a) / size,
                             (cy + b) / size);
  auto lesion_box = [&](double lx, double ly, double r) {
    return box_from_corners(label, (lx - r) / size, (ly - r) / size, (lx + r) / size,
                            (ly + r) / size);
  };
  switch (label) {
    case ClassLabel::glioma: {
      const double ang = uniform(rng, 0, 2 * std::numbers::pi);
      const double rr = uniform(rng, 10, 35) * s;
      const double lx = cx + rr * std::cos(ang);
      const double ly = cy + rr * std::sin(ang);
      const double r = uniform(rng, 22, 34) * s;
      paint_disc(plane, size, lx, ly, r, 0.75f, 4 * s);
      paint_disc(plane, size, lx, ly, r * 0.55, 0.15f, 3 * s);
      box = lesion_box(lx, ly, r);
      break;
    }
    case ClassLabel::meningioma: {
      const double ang = uniform(rng, 0, 2 * std::numbers::pi);
      const double r = uniform(rng, 12, 20) * s;
      const double lx = cx + (a - r - 6 * s) * std::cos(ang);
      const double ly = cy + (b - r - 6 * s) * std::sin(ang);
      paint_disc(plane, size, lx, ly, r, 0.95f, 2 * s);
      box = lesion_box(lx, ly, r);
      break;
    }
    case ClassLabel::pituitary: {
      const double r = uniform(rng, 7, 11) * s;
      const double lx = cx + uniform(rng, -6, 6) * s;
      const double ly = cy + b * 0.45 + uniform(rng, -5, 5) * s;
      paint_disc(plane, size, lx, ly, r, 0.9f, 2 * s);
      box = lesion_box(lx, ly, r);
      break;
    }
    case ClassLabel::no_tumor:
      break;
  }

  ImageTensor img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const float v = std::clamp(plane[static_cast<std::size_t>(y) * size + x], 0.0f, 1.0f);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  }
  return {std::move(img), clip(box)};
}

void write_classification_corpus(const fs::path& root, int per_class, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto c : kAllClasses) {
    const auto dir = root / std::string(class_name(c));
    fs::create_directories(dir);
    for (int k = 0; k < per_class; ++k) {
      const auto phantom = make_phantom(c, size, rng);
      write_png(phantom.image, dir / fmt::format("{}_{:04d}.png", class_name(c), k));
    }
  }
}

void write_detection_corpus(const fs::path& root, int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  for (int k = 0; k < count; ++k) {
    const auto c = kAllClasses[static_cast<std::size_t>(k) % kNumClasses];
    const auto phantom = make_phantom(c, size, rng);
    const auto stem = fmt::format("{}_{:04d}", class_name(c), k);
    write_png(phantom.image, root / "images" / (stem + ".png"));
    write_yolo_label_file(root / "labels" / (stem + ".txt"), {phantom.box});
  }
}

}  // namespace brainfusion::synthetic
