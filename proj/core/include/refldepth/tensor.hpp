#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace refldepth {

// Dense 2D float buffer, row-major and channel-interleaved:
// index(y, x, ch) = (y * width + x) * channels + ch.
// Carrier for images (c=3), depth/error/mask maps (c=1) and warp
// coordinate fields (c=2).
class Tensor {
 public:
  Tensor() = default;
  Tensor(int height, int width, int channels);

  static Tensor full(int height, int width, int channels, float value);
  static Tensor scalar(double value);  // 1x1x1

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(int y, int x, int ch = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + ch];
  }
  float at(int y, int x, int ch = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + ch];
  }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }
  bool is_scalar() const {
    return height_ == 1 && width_ == 1 && channels_ == 1;
  }

  bool all_finite() const;
  double sum() const;  // accumulated in double, row partials combined in order
  float min_value() const;
  float max_value() const;

  std::string shape_string() const;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace refldepth
