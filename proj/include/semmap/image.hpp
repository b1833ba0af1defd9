#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace semmap {

/// Row-major, interleaved image buffer.
template <typename T, int Channels = 1>
class Image {
 public:
  using value_type = T;
  static constexpr int channels = Channels;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * Channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }
  bool same_shape(int width, int height) const { return width_ == width && height_ == height; }
  template <typename Other>
  bool same_shape(const Other& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  T& at(int x, int y, int c = 0) { return data_[index(x, y) * Channels + c]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y) * Channels + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using RgbImage = Image<std::uint8_t, 3>;
using DepthImage = Image<float>;
using MaskImage = Image<std::uint8_t>;
/// Per-pixel label ids; kUnlabeled marks void truth or missing projections.
using LabelImage = Image<std::uint8_t>;

inline constexpr std::uint8_t kUnlabeled = 255;

}  // namespace semmap
