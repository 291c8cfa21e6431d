#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dermo/errors.hpp"

namespace dermo {

/// Dense H x W x C grid stored row-major with interleaved channels.
template <typename T>
class PixelGrid {
 public:
  PixelGrid() = default;

  PixelGrid(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
      : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}

  PixelGrid(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_)
      throw DimensionError("pixel buffer size does not match " + std::to_string(height_) + "x" +
                           std::to_string(width_) + "x" + std::to_string(channels_));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c, std::size_t ch) {
    return data_[(r * width_ + c) * channels_ + ch];
  }
  const T& operator()(std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[(r * width_ + c) * channels_ + ch];
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const PixelGrid&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

using Image = PixelGrid<std::uint8_t>;

namespace detail {
template <typename T>
void require_non_empty(const PixelGrid<T>& img, const char* op) {
  if (img.empty()) throw DimensionError(std::string(op) + ": empty pixel grid");
}
}  // namespace detail

/// Mirror across the vertical axis: (r, c) -> (r, W-1-c).
template <typename T>
PixelGrid<T> flip_horizontal(const PixelGrid<T>& img) {
  detail::require_non_empty(img, "flip_horizontal");
  PixelGrid<T> out(img.height(), img.width(), img.channels());
  const std::size_t w = img.width();
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < img.channels(); ++ch) out(r, w - 1 - c, ch) = img(r, c, ch);
  return out;
}

/// Mirror across the horizontal axis: (r, c) -> (H-1-r, c).
template <typename T>
PixelGrid<T> flip_vertical(const PixelGrid<T>& img) {
  detail::require_non_empty(img, "flip_vertical");
  PixelGrid<T> out(img.height(), img.width(), img.channels());
  const std::size_t row = img.width() * img.channels();
  for (std::size_t r = 0; r < img.height(); ++r) {
    const auto src = img.data().begin() + static_cast<std::ptrdiff_t>(r * row);
    std::copy(src, src + static_cast<std::ptrdiff_t>(row),
              out.data().begin() + static_cast<std::ptrdiff_t>((img.height() - 1 - r) * row));
  }
  return out;
}

/// Decodes a JPEG/PNG file to 8-bit RGB.
inline Image decode_image(const std::filesystem::path& path, const std::string& image_id) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DecodeError(image_id, "unreadable file " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols), 3);
  for (int r = 0; r < rgb.rows; ++r)
    std::copy(rgb.ptr<std::uint8_t>(r), rgb.ptr<std::uint8_t>(r) + rgb.cols * 3,
              out.data().begin() + static_cast<std::ptrdiff_t>(r) * rgb.cols * 3);
  return out;
}

/// Bilinear resize. Returns the input unchanged when it already has the target size.
inline Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  detail::require_non_empty(img, "resize_bilinear");
  if (img.height() == height && img.width() == width) return img;
  const int type = CV_8UC(static_cast<int>(img.channels()));
  cv::Mat src(static_cast<int>(img.height()), static_cast<int>(img.width()), type,
              const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_LINEAR);
  std::vector<std::uint8_t> data(dst.datastart, dst.dataend);
  return Image(height, width, img.channels(), std::move(data));
}

/// Writes an RGB image as PNG.
inline void write_png(const Image& img, const std::filesystem::path& path) {
  detail::require_non_empty(img, "write_png");
  if (img.channels() != 3) throw DimensionError("write_png expects 3 channels");
  cv::Mat rgb(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3,
              const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image " + path.string());
}

}  // namespace dermo
