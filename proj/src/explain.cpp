#include "brainfusion/explain.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "brainfusion/error.hpp"

namespace brainfusion {

float Heatmap::max_value() const noexcept {
  return values.empty() ? 0.0f : *std::max_element(values.begin(), values.end());
}

float Heatmap::min_value() const noexcept {
  return values.empty() ? 0.0f : *std::min_element(values.begin(), values.end());
}

namespace {

int cv_colormap(Colormap c) {
  switch (c) {
    case Colormap::viridis: return cv::COLORMAP_VIRIDIS;
    case Colormap::inferno: return cv::COLORMAP_INFERNO;
    case Colormap::jet: return cv::COLORMAP_JET;
  }
  throw ConfigError("unknown colormap");
}

constexpr int kOutline = 2;

}  // namespace

ImageTensor colorize(const Heatmap& hm, Colormap cmap) {
  cv::Mat gray(hm.height, hm.width, CV_8UC1);
  for (int y = 0; y < hm.height; ++y) {
    auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < hm.width; ++x) {
      row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(hm.at(y, x), 0.0f, 1.0f) * 255.0f));
    }
  }
  cv::Mat bgr;
  cv::applyColorMap(gray, bgr, cv_colormap(cmap));
  ImageTensor out(hm.height, hm.width);
  for (int y = 0; y < hm.height; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < hm.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = row[x][2 - c] / 255.0f;
    }
  }
  return out;
}

OverlayImage render_heatmap_overlay(const ImageTensor& img, const Heatmap& hm, double alpha, Colormap cmap) {
  if (img.height() != hm.height || img.width() != hm.width) {
    throw ShapeError(fmt::format("heatmap is {}x{} but image is {}x{}", hm.height, hm.width, img.height(),
                                 img.width()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError(fmt::format("alpha must be in [0,1], got {}", alpha));
  const ImageTensor colors = colorize(hm, cmap);
  const auto a = static_cast<float>(alpha);
  OverlayImage out{img, {}};
  auto dst = out.image.data();
  const auto src = colors.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp((1.0f - a) * dst[i] + a * src[i], 0.0f, 1.0f);
  return out;
}

std::string detection_caption(const Detection& d) {
  return fmt::format("{} {:.2f}", class_name(d.box.class_id), d.confidence());
}

std::array<float, 3> class_color(ClassLabel c) noexcept {
  switch (c) {
    case ClassLabel::glioma: return {1.0f, 0.2f, 0.2f};
    case ClassLabel::meningioma: return {0.2f, 0.6f, 1.0f};
    case ClassLabel::no_tumor: return {0.6f, 0.6f, 0.6f};
    case ClassLabel::pituitary: return {1.0f, 0.85f, 0.1f};
  }
  return {1.0f, 1.0f, 1.0f};
}

OverlayImage render_box_overlay(const ImageTensor& img, std::span<const Detection> dets) {
  OverlayImage out{img, {}};
  if (img.empty()) return out;
  const int w = img.width();
  const int h = img.height();
  cv::Mat canvas(h, w, CV_32FC3, out.image.data().data());
  for (const auto& d : dets) {
    const PixelRect r = denormalize(clip(d.box), w, h);
    const int x1 = std::clamp(static_cast<int>(std::lround(r.x1)), 0, w - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(r.y1)), 0, h - 1);
    const int x2 = std::clamp(static_cast<int>(std::lround(r.x2)), 0, w - 1);
    const int y2 = std::clamp(static_cast<int>(std::lround(r.y2)), 0, h - 1);
    const auto color = class_color(d.box.class_id);
    for (int y = y1; y <= y2; ++y) {
      for (int x = x1; x <= x2; ++x) {
        const bool edge = x - x1 < kOutline || x2 - x < kOutline || y - y1 < kOutline || y2 - y < kOutline;
        if (!edge) continue;
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c];
      }
    }
    const std::string caption = detection_caption(d);
    int baseline = 0;
    const double scale = std::max(0.35, w / 1280.0);
    const cv::Size text = cv::getTextSize(caption, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline);
    const int above = y1 - 3 - baseline;
    const int ty = above - text.height >= 0 ? above : y1 + kOutline + 2 + text.height;
    cv::putText(canvas, caption, {x1 + 1, ty}, cv::FONT_HERSHEY_SIMPLEX, scale, {color[0], color[1], color[2]}, 1,
                cv::LINE_AA);
    out.captions.push_back(caption);
  }
  return out;
}

void write_heatmap_grid(const Heatmap& hm, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write heatmap grid " + path.string());
  f << hm.height << ' ' << hm.width << ' ' << class_name(hm.target_class) << '\n';
  for (int y = 0; y < hm.height; ++y) {
    for (int x = 0; x < hm.width; ++x) {
      if (x) f << ' ';
      f << fmt::format("{:.6f}", hm.at(y, x));
    }
    f << '\n';
  }
  if (!f) throw Error("cannot write heatmap grid " + path.string());
}

Heatmap read_heatmap_grid(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open heatmap grid " + path.string(), 0);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("missing header", 1);
  std::istringstream head(line);
  Heatmap hm;
  std::string cls;
  if (!(head >> hm.height >> hm.width >> cls) || hm.height < 0 || hm.width < 0) {
    throw ParseError("header must be 'height width class'", 1);
  }
  const auto label = label_from_string(cls);
  if (!label) throw ParseError("unknown class '" + cls + "'", 1);
  hm.target_class = *label;
  hm.values.reserve(static_cast<std::size_t>(hm.height) * hm.width);
  for (int y = 0; y < hm.height; ++y) {
    if (!std::getline(f, line)) throw ParseError("missing row", y + 2);
    std::istringstream row(line);
    float v = 0.0f;
    int n = 0;
    while (row >> v) {
      hm.values.push_back(v);
      ++n;
    }
    if (n != hm.width || !row.eof()) throw ParseError(fmt::format("expected {} values", hm.width), y + 2);
  }
  return hm;
}

}  // namespace brainfusion
