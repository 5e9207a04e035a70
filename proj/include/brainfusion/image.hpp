#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace brainfusion {

/// H x W x 3 float image, row-major, interleaved RGB.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int height, int width, float fill = 0.0f);
  ImageTensor(int height, int width, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float min_value() const noexcept;
  float max_value() const noexcept;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

struct ImageSize {
  int height;
  int width;
};

inline constexpr ImageSize kClassifierInput{224, 224};
inline constexpr ImageSize kDetectorInput{640, 640};

/// Decodes a PNG/JPEG raster to RGB in [0,255] and resizes bilinearly.
/// Grayscale sources are replicated to three channels. Throws DecodeError.
ImageTensor decode_and_resize(const std::filesystem::path& path, ImageSize target);

/// Decodes without resizing.
ImageTensor decode_image(const std::filesystem::path& path);

/// Bilinear resize; returns a copy when the size already matches.
ImageTensor resize(const ImageTensor& img, ImageSize target);

/// Divides every value by 255.
ImageTensor normalize(const ImageTensor& img);

/// Writes an image holding values in [0,1] as 8-bit PNG.
void write_png(const ImageTensor& img, const std::filesystem::path& path);

/// Bilinear sample with coordinates clamped to the image (nearest fill).
float sample_bilinear_clamped(const ImageTensor& img, double y, double x, int c) noexcept;

}  // namespace brainfusion
