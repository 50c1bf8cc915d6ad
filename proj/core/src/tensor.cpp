#include "diffeocan/tensor.hpp"

namespace diffeocan {

namespace {
std::size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  const std::size_t n = checked_numel(shape);
  t.shape = std::move(shape);
  t.data.assign(n, 0.0f);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

Tensor Tensor::from_image(const Image& img) {
  if (img.empty()) throw std::invalid_argument("Tensor::from_image: empty image");
  Tensor t;
  t.shape = {img.height, img.width};
  t.data = img.data;
  return t;
}

Tensor Tensor::from_planes(const std::vector<float>& x, const std::vector<float>& y, int h,
                           int w) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (x.size() != n || y.size() != n) {
    throw std::invalid_argument("Tensor::from_planes: plane sizes do not match shape");
  }
  Tensor t = zeros({2, h, w});
  std::copy(x.begin(), x.end(), t.data.begin());
  std::copy(y.begin(), y.end(), t.data.begin() + static_cast<std::ptrdiff_t>(n));
  return t;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Image Tensor::to_image() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::to_image: rank must be 2");
  Image img(shape[0], shape[1]);
  img.data = data;
  return img;
}

}  // namespace diffeocan
