#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace diffeocan {

// Scalar raster, row-major, intensities nominally in [0, 1].
// Pixel (i, j) refers to row i (the y coordinate) and column j (x).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Image: non-positive shape");
  }

  float at(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }
  float& at(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

// Binary raster with the same indexing convention as Image.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Mask: non-positive shape");
  }

  std::uint8_t at(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }
  std::uint8_t& at(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
};

// Per-pixel 2-vectors stored as separate x and y planes, in pixel units.
struct VectorField {
  int height = 0;
  int width = 0;
  std::vector<float> x;
  std::vector<float> y;

  VectorField() = default;
  VectorField(int h, int w)
      : height(h),
        width(w),
        x(static_cast<std::size_t>(h) * w, 0.0f),
        y(static_cast<std::size_t>(h) * w, 0.0f) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("VectorField: non-positive shape");
  }

  std::size_t size() const { return x.size(); }
};

// Dense map of absolute target coordinates: pixel (i, j) is sent to
// (x[i*w+j], y[i*w+j]).  The identity stores (j, i) at pixel (i, j).
struct DeformationMap {
  int height = 0;
  int width = 0;
  std::vector<float> x;
  std::vector<float> y;

  DeformationMap() = default;
  DeformationMap(int h, int w)
      : height(h),
        width(w),
        x(static_cast<std::size_t>(h) * w, 0.0f),
        y(static_cast<std::size_t>(h) * w, 0.0f) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("DeformationMap: non-positive shape");
  }

  static DeformationMap identity(int h, int w);

  std::size_t size() const { return x.size(); }
  bool same_shape(const DeformationMap& o) const {
    return height == o.height && width == o.width;
  }
};

namespace detail {

// Border-replicate bilinear fetch shared by every resampling path in the
// project, so that images, maps and differentiable graph nodes all agree to
// the last bit.  Coordinates are clamped to the valid rectangle; integer
// coordinates reproduce stored samples exactly.
template <typename T>
inline T bilinear_fetch(const T* img, int h, int w, T sx, T sy) {
  sx = std::min<T>(std::max<T>(sx, T(0)), T(w - 1));
  sy = std::min<T>(std::max<T>(sy, T(0)), T(h - 1));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const T fx = sx - static_cast<T>(x0);
  const T fy = sy - static_cast<T>(y0);
  const T v00 = img[static_cast<std::size_t>(y0) * w + x0];
  const T v01 = img[static_cast<std::size_t>(y0) * w + x1];
  const T v10 = img[static_cast<std::size_t>(y1) * w + x0];
  const T v11 = img[static_cast<std::size_t>(y1) * w + x1];
  const T top = v00 * (T(1) - fx) + v01 * fx;
  const T bot = v10 * (T(1) - fx) + v11 * fx;
  return top * (T(1) - fy) + bot * fy;
}

}  // namespace detail

// Resamples img at the coordinates stored in coords; the output takes the
// shape of coords.  Out-of-range coordinates replicate the border.
Image sample_bilinear(const Image& img, const DeformationMap& coords);

// Pullback of x under g: output pixel p reads x at g(p).  Requires matching
// shapes.
Image warp_image(const Image& x, const DeformationMap& g);

// Pointwise composition outer(inner(p)): resamples the coordinate planes of
// outer at the positions given by inner.
DeformationMap compose_maps(const DeformationMap& outer, const DeformationMap& inner);

// Binarises at tau in (0, 1): mask(p) = img(p) >= tau.
Mask threshold_mask(const Image& img, float tau);

// Float view of a mask (0.0 / 1.0), the form in which masks are resampled.
Image mask_to_image(const Mask& m);

// Warp-then-rebinarise for label rasters, threshold fixed at 0.5.
Mask warp_mask(const Mask& m, const DeformationMap& g);

}  // namespace diffeocan
