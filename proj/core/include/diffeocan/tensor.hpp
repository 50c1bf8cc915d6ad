#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffeocan/image.hpp"

namespace diffeocan {

// Dense row-major float tensor.  Rank is small (<= 4 in practice) and the
// shape is carried explicitly; there are no views or strides.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor scalar(float value);
  static Tensor from_image(const Image& img);   // shape [H, W]
  static Tensor from_planes(const std::vector<float>& x, const std::vector<float>& y,
                            int h, int w);      // shape [2, H, W], x plane first

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  Image to_image() const;  // requires shape [H, W]
};

}  // namespace diffeocan
