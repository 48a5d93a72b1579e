#include "refldepth/tensor.hpp"

#include <limits>
#include <stdexcept>

namespace refldepth {

Tensor::Tensor(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("Tensor: non-positive shape " +
                                std::to_string(height) + "x" +
                                std::to_string(width) + "x" +
                                std::to_string(channels));
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
}

Tensor Tensor::full(int height, int width, int channels, float value) {
  Tensor t(height, width, channels);
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t(1, 1, 1);
  t.data_[0] = static_cast<float>(value);
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::sum() const {
  // Per-row partials combined in row order: the result does not depend on
  // how rows are distributed over threads elsewhere.
  const std::size_t row_len = static_cast<std::size_t>(width_) * channels_;
  double total = 0.0;
  for (int y = 0; y < height_; ++y) {
    double row = 0.0;
    const float* p = data_.data() + y * row_len;
    for (std::size_t i = 0; i < row_len; ++i) row += p[i];
    total += row;
  }
  return total;
}

float Tensor::min_value() const {
  float m = std::numeric_limits<float>::infinity();
  for (float v : data_) m = std::min(m, v);
  return m;
}

float Tensor::max_value() const {
  float m = -std::numeric_limits<float>::infinity();
  for (float v : data_) m = std::max(m, v);
  return m;
}

std::string Tensor::shape_string() const {
  return std::to_string(height_) + "x" + std::to_string(width_) + "x" +
         std::to_string(channels_);
}

}  // namespace refldepth
