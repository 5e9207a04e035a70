#include "brainfusion/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "brainfusion/error.hpp"

namespace brainfusion {

ImageTensor::ImageTensor(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width * kChannels, fill) {
  if (height < 0 || width < 0) throw ShapeError("negative image dimensions");
}

ImageTensor::ImageTensor(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw ShapeError("image buffer size does not match dimensions");
  }
}

float ImageTensor::min_value() const noexcept {
  return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end());
}

float ImageTensor::max_value() const noexcept {
  return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end());
}

namespace {

ImageTensor from_mat(const cv::Mat& rgb_float) {
  ImageTensor out(rgb_float.rows, rgb_float.cols);
  for (int y = 0; y < rgb_float.rows; ++y) {
    const auto* row = rgb_float.ptr<float>(y);
    std::copy(row, row + rgb_float.cols * 3, out.data().begin() + static_cast<long>(y) * rgb_float.cols * 3);
  }
  return out;
}

cv::Mat to_mat(const ImageTensor& img) {
  cv::Mat m(img.height(), img.width(), CV_32FC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<float>(y);
    const auto src = img.data().subspan(static_cast<std::size_t>(y) * img.width() * 3, img.width() * 3);
    std::copy(src.begin(), src.end(), row);
  }
  return m;
}

}  // namespace

ImageTensor decode_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DecodeError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3);
  return from_mat(f);
}

ImageTensor resize(const ImageTensor& img, ImageSize target) {
  if (target.height <= 0 || target.width <= 0) throw ShapeError("resize target must be positive");
  if (img.height() == target.height && img.width() == target.width) return img;
  cv::Mat dst;
  cv::resize(to_mat(img), dst, cv::Size(target.width, target.height), 0, 0, cv::INTER_LINEAR);
  return from_mat(dst);
}

ImageTensor decode_and_resize(const std::filesystem::path& path, ImageSize target) {
  return resize(decode_image(path), target);
}

ImageTensor normalize(const ImageTensor& img) {
  ImageTensor out = img;
  for (auto& v : out.data()) v /= 255.0f;
  return out;
}

void write_png(const ImageTensor& img, const std::filesystem::path& path) {
  cv::Mat rgb8;
  to_mat(img).convertTo(rgb8, CV_8UC3, 255.0);
  cv::Mat bgr8;
  cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr8)) throw Error("cannot write PNG " + path.string());
}

float sample_bilinear_clamped(const ImageTensor& img, double y, double x, int c) noexcept {
  const double max_y = img.height() - 1;
  const double max_x = img.width() - 1;
  y = std::clamp(y, 0.0, max_y);
  x = std::clamp(x, 0.0, max_x);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  if (fy == 0.0 && fx == 0.0) return img.at(y0, x0, c);
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

}  // namespace brainfusion
