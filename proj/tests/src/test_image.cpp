#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>

#include "diffeocan/common.hpp"
#include "diffeocan/image.hpp"
#include "diffeocan/image_io.hpp"

using namespace diffeocan;

namespace {

Image noise_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (float& v : img.data) v = rng.uniform();
  return img;
}

DeformationMap translation(int h, int w, float dx, float dy) {
  DeformationMap g = DeformationMap::identity(h, w);
  for (float& v : g.x) v += dx;
  for (float& v : g.y) v += dy;
  return g;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/diffeocan_test_") + name;
}

}  // namespace

TEST_CASE("identity warp reproduces the image bit for bit") {
  const Image img = noise_image(9, 7, 42);
  const Image out = warp_image(img, DeformationMap::identity(9, 7));
  REQUIRE(out.same_shape(img));
  for (std::size_t k = 0; k < img.size(); ++k) CHECK(out.data[k] == img.data[k]);
}

TEST_CASE("bilinear sample halfway between two pixels averages them") {
  Image img(1, 2);
  img.at(0, 0) = 0.0f;
  img.at(0, 1) = 1.0f;
  DeformationMap coords(1, 1);
  coords.x[0] = 0.5f;
  coords.y[0] = 0.0f;
  const Image out = sample_bilinear(img, coords);
  CHECK(out.data[0] == doctest::Approx(0.5f));
}

TEST_CASE("out-of-domain coordinates clamp to the border pixel") {
  Image img(3, 3);
  img.at(0, 0) = 0.25f;
  DeformationMap coords(1, 1);
  coords.x[0] = -5.0f;
  coords.y[0] = -5.0f;
  const Image out = sample_bilinear(img, coords);
  CHECK(out.data[0] == doctest::Approx(0.25f));
}

TEST_CASE("integer translation shifts a one-hot image by one pixel") {
  Image img(5, 5);
  img.at(2, 2) = 1.0f;
  const Image out = warp_image(img, translation(5, 5, 1.0f, 0.0f));
  CHECK(out.at(2, 1) == doctest::Approx(1.0f));
  CHECK(out.at(2, 2) == doctest::Approx(0.0f));
}

TEST_CASE("sampling is linear in the image") {
  const Image x = noise_image(8, 8, 1);
  const Image y = noise_image(8, 8, 2);
  Image mix(8, 8);
  for (std::size_t k = 0; k < mix.size(); ++k) mix.data[k] = 0.3f * x.data[k] + 0.7f * y.data[k];
  const DeformationMap g = translation(8, 8, 0.4f, -0.6f);
  const Image wx = warp_image(x, g);
  const Image wy = warp_image(y, g);
  const Image wm = warp_image(mix, g);
  for (std::size_t k = 0; k < wm.size(); ++k) {
    CHECK(wm.data[k] == doctest::Approx(0.3f * wx.data[k] + 0.7f * wy.data[k]).epsilon(1e-6));
  }
}

TEST_CASE("sampled values stay within the image range") {
  const Image img = noise_image(12, 12, 7);
  float lo = 1.0f, hi = 0.0f;
  for (float v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  DeformationMap g = DeformationMap::identity(12, 12);
  Rng rng(8);
  for (std::size_t k = 0; k < g.size(); ++k) {
    g.x[k] += rng.uniform(-3.0f, 3.0f);
    g.y[k] += rng.uniform(-3.0f, 3.0f);
  }
  const Image out = sample_bilinear(img, g);
  for (float v : out.data) {
    CHECK(v >= lo - 1e-6f);
    CHECK(v <= hi + 1e-6f);
  }
}

TEST_CASE("compose with identity returns the other map exactly") {
  const DeformationMap m = translation(6, 6, 1.25f, -0.5f);
  const DeformationMap out = compose_maps(m, DeformationMap::identity(6, 6));
  for (std::size_t k = 0; k < m.size(); ++k) {
    CHECK(out.x[k] == m.x[k]);
    CHECK(out.y[k] == m.y[k]);
  }
}

TEST_CASE("composing two translations adds them in the interior") {
  const DeformationMap a = translation(8, 8, 1.0f, 0.5f);
  const DeformationMap b = translation(8, 8, 0.5f, 1.0f);
  const DeformationMap out = compose_maps(a, b);
  for (int i = 2; i < 6; ++i) {
    for (int j = 2; j < 6; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * 8 + j;
      CHECK(out.x[k] == doctest::Approx(j + 1.5f));
      CHECK(out.y[k] == doctest::Approx(i + 1.5f));
    }
  }
}

TEST_CASE("threshold_mask applies p >= tau per pixel") {
  Image img(1, 3);
  img.data = {0.2f, 0.5f, 0.8f};
  const Mask m = threshold_mask(img, 0.5f);
  CHECK(m.data[0] == 0);
  CHECK(m.data[1] == 1);
  CHECK(m.data[2] == 1);
  CHECK_THROWS(threshold_mask(img, 0.0f));
  CHECK_THROWS(threshold_mask(img, 1.0f));
}

TEST_CASE("constant images threshold to constant masks") {
  const Image high(4, 4, 0.7f);
  const Image low(4, 4, 0.3f);
  for (std::uint8_t v : threshold_mask(high, 0.5f).data) CHECK(v == 1);
  for (std::uint8_t v : threshold_mask(low, 0.5f).data) CHECK(v == 0);
}

TEST_CASE("pgm round-trip preserves quantised intensities") {
  const Image img = noise_image(10, 6, 99);
  const std::string path = temp_path("roundtrip.pgm");
  write_pgm(path, img);
  const Image back = read_pgm(path);
  REQUIRE(back.same_shape(img));
  for (std::size_t k = 0; k < img.size(); ++k) {
    CHECK(std::fabs(back.data[k] - img.data[k]) <= 0.5f / 255.0f + 1e-6f);
  }
  std::remove(path.c_str());
}

TEST_CASE("pgm rejects malformed headers") {
  const std::string path = temp_path("bad.pgm");
  FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("P2\n2 2\n255\n0 0 0 0\n", f);
  std::fclose(f);
  CHECK_THROWS_AS(read_pgm(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("map pfm round-trip is exact") {
  DeformationMap m = translation(5, 4, 0.125f, -2.75f);
  m.x[3] = 1234.5f;
  const std::string path = temp_path("map.pfm");
  write_map_pfm(path, m);
  const DeformationMap back = read_map_pfm(path);
  REQUIRE(back.same_shape(m));
  for (std::size_t k = 0; k < m.size(); ++k) {
    CHECK(back.x[k] == m.x[k]);
    CHECK(back.y[k] == m.y[k]);
  }
  std::remove(path.c_str());
}

TEST_CASE("mask warp by identity keeps the mask") {
  Mask m(6, 6);
  for (int i = 2; i < 4; ++i)
    for (int j = 1; j < 5; ++j) m.at(i, j) = 1;
  const Mask out = warp_mask(m, DeformationMap::identity(6, 6));
  for (std::size_t k = 0; k < m.size(); ++k) CHECK(out.data[k] == m.data[k]);
}
