#include "diffeocan/image.hpp"

namespace diffeocan {

DeformationMap DeformationMap::identity(int h, int w) {
  DeformationMap m(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      m.x[k] = static_cast<float>(j);
      m.y[k] = static_cast<float>(i);
    }
  }
  return m;
}

Image sample_bilinear(const Image& img, const DeformationMap& coords) {
  if (img.empty()) throw std::invalid_argument("sample_bilinear: empty image");
  if (coords.size() == 0) throw std::invalid_argument("sample_bilinear: empty coordinate map");
  Image out(coords.height, coords.width);
  const float* src = img.data.data();
  for (std::size_t k = 0; k < coords.size(); ++k) {
    out.data[k] = detail::bilinear_fetch(src, img.height, img.width, coords.x[k], coords.y[k]);
  }
  return out;
}

Image warp_image(const Image& x, const DeformationMap& g) {
  if (x.height != g.height || x.width != g.width) {
    throw std::invalid_argument("warp_image: image and map shapes differ");
  }
  return sample_bilinear(x, g);
}

DeformationMap compose_maps(const DeformationMap& outer, const DeformationMap& inner) {
  if (!outer.same_shape(inner)) {
    throw std::invalid_argument("compose_maps: shapes differ");
  }
  DeformationMap out(inner.height, inner.width);
  const int h = outer.height;
  const int w = outer.width;
  for (std::size_t k = 0; k < inner.size(); ++k) {
    const float sx = inner.x[k];
    const float sy = inner.y[k];
    out.x[k] = detail::bilinear_fetch(outer.x.data(), h, w, sx, sy);
    out.y[k] = detail::bilinear_fetch(outer.y.data(), h, w, sx, sy);
  }
  return out;
}

Mask threshold_mask(const Image& img, float tau) {
  if (!(tau > 0.0f && tau < 1.0f)) {
    throw std::invalid_argument("threshold_mask: tau must lie strictly inside (0, 1)");
  }
  Mask out(img.height, img.width);
  for (std::size_t k = 0; k < img.size(); ++k) {
    out.data[k] = img.data[k] >= tau ? 1 : 0;
  }
  return out;
}

Image mask_to_image(const Mask& m) {
  Image out(m.height, m.width);
  for (std::size_t k = 0; k < m.size(); ++k) {
    out.data[k] = m.data[k] ? 1.0f : 0.0f;
  }
  return out;
}

Mask warp_mask(const Mask& m, const DeformationMap& g) {
  return threshold_mask(warp_image(mask_to_image(m), g), 0.5f);
}

}  // namespace diffeocan
