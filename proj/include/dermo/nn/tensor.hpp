#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dermo/errors.hpp"

namespace dermo::nn {

/// NCHW extents.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  std::size_t sample() const noexcept { return c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense float32 NCHW tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) throw DimensionError("tensor data does not match shape " + shape_.str());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  /// Reinterprets the buffer with another shape of equal size.
  Tensor reshaped(Shape s) const& { return Tensor(s, data_); }
  Tensor reshaped(Shape s) && { return Tensor(s, std::move(data_)); }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace dermo::nn
