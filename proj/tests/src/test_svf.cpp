#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <vector>

#include "diffeocan/common.hpp"
#include "diffeocan/image_io.hpp"
#include "diffeocan/svf.hpp"

using namespace diffeocan;

namespace {

// Gaussian-filtered noise scaled to a target maximum norm; smooth enough for
// the exponential map to behave like the continuous flow.
VectorField smooth_field(int h, int w, float max_norm, std::uint64_t seed) {
  Rng rng(seed);
  VectorField raw(h, w);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    raw.x[k] = rng.uniform(-1.0f, 1.0f);
    raw.y[k] = rng.uniform(-1.0f, 1.0f);
  }
  auto blur = [&](std::vector<float>& plane) {
    const int radius = 3;
    std::vector<float> kernel(2 * radius + 1);
    float norm = 0.0f;
    for (int t = -radius; t <= radius; ++t) {
      kernel[t + radius] = std::exp(-0.5f * t * t / 2.25f);
      norm += kernel[t + radius];
    }
    for (float& v : kernel) v /= norm;
    std::vector<float> tmp(plane.size());
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float acc = 0.0f;
        for (int t = -radius; t <= radius; ++t) {
          const int jj = std::clamp(j + t, 0, w - 1);
          acc += kernel[t + radius] * plane[static_cast<std::size_t>(i) * w + jj];
        }
        tmp[static_cast<std::size_t>(i) * w + j] = acc;
      }
    }
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float acc = 0.0f;
        for (int t = -radius; t <= radius; ++t) {
          const int ii = std::clamp(i + t, 0, h - 1);
          acc += kernel[t + radius] * tmp[static_cast<std::size_t>(ii) * w + j];
        }
        plane[static_cast<std::size_t>(i) * w + j] = acc;
      }
    }
  };
  blur(raw.x);
  blur(raw.y);
  float peak = 0.0f;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    peak = std::max(peak, std::hypot(raw.x[k], raw.y[k]));
  }
  if (peak > 0.0f) {
    const float s = max_norm / peak;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      raw.x[k] *= s;
      raw.y[k] *= s;
    }
  }
  return raw;
}

float max_displacement_from_identity(const DeformationMap& g) {
  float worst = 0.0f;
  for (int i = 0; i < g.height; ++i) {
    for (int j = 0; j < g.width; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * g.width + j;
      worst = std::max(worst, std::hypot(g.x[k] - j, g.y[k] - i));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("boundary taper is zero on the border and one inside the margin") {
  const int h = 16, w = 20, margin = 3;
  const std::vector<float> taper = boundary_taper(h, w, margin);
  for (int j = 0; j < w; ++j) {
    CHECK(taper[static_cast<std::size_t>(j)] == 0.0f);
    CHECK(taper[static_cast<std::size_t>(h - 1) * w + j] == 0.0f);
  }
  for (int i = 0; i < h; ++i) {
    CHECK(taper[static_cast<std::size_t>(i) * w] == 0.0f);
    CHECK(taper[static_cast<std::size_t>(i) * w + w - 1] == 0.0f);
  }
  for (int i = margin + 1; i < h - margin - 1; ++i) {
    for (int j = margin + 1; j < w - margin - 1; ++j) {
      CHECK(taper[static_cast<std::size_t>(i) * w + j] == doctest::Approx(1.0f));
    }
  }
}

TEST_CASE("zero velocity exponentiates to the identity exactly") {
  const Svf v = Svf::from_velocity(VectorField(32, 32));
  const DeformationMap g = exponentiate(v, 4);
  const DeformationMap id = DeformationMap::identity(32, 32);
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(g.x[k] == id.x[k]);
    CHECK(g.y[k] == id.y[k]);
  }
}

TEST_CASE("constant interior velocity integrates to a translation") {
  const int n = 32;
  VectorField field(n, n);
  for (std::size_t k = 0; k < field.size(); ++k) {
    field.x[k] = 1.5f;
    field.y[k] = -0.75f;
  }
  const DeformationMap g = exponentiate(Svf::from_velocity(field), 4);
  for (int i = 10; i < n - 10; ++i) {
    for (int j = 10; j < n - 10; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      CHECK(std::abs(g.x[k] - (j + 1.5f)) < 0.05f);
      CHECK(std::abs(g.y[k] - (i - 0.75f)) < 0.05f);
    }
  }
}

TEST_CASE("linear velocity field matches the matrix-exponential flow") {
  const int n = 33;
  const float cx = (n - 1) / 2.0f;
  const std::array<float, 4> a = {0.04f, 0.05f, -0.03f, -0.02f};
  VectorField field(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      const float px = j - cx, py = i - cx;
      field.x[k] = a[0] * px + a[1] * py;
      field.y[k] = a[2] * px + a[3] * py;
    }
  }
  // exp(A) by power series; converges to machine precision for this scale.
  std::array<double, 4> ea = {1.0, 0.0, 0.0, 1.0};
  std::array<double, 4> term = {1.0, 0.0, 0.0, 1.0};
  for (int t = 1; t <= 30; ++t) {
    const std::array<double, 4> next = {
        (term[0] * a[0] + term[1] * a[2]) / t, (term[0] * a[1] + term[1] * a[3]) / t,
        (term[2] * a[0] + term[3] * a[2]) / t, (term[2] * a[1] + term[3] * a[3]) / t};
    term = next;
    for (int q = 0; q < 4; ++q) ea[q] += term[q];
  }
  const DeformationMap g = exponentiate(Svf::from_velocity(field), 6);
  for (int i = 10; i < n - 10; ++i) {
    for (int j = 10; j < n - 10; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      const double px = j - cx, py = i - cx;
      const double ex = cx + ea[0] * px + ea[1] * py;
      const double ey = cx + ea[2] * px + ea[3] * py;
      CHECK(std::abs(g.x[k] - ex) < 0.05);
      CHECK(std::abs(g.y[k] - ey) < 0.05);
    }
  }
}

TEST_CASE("forward and inverse maps compose to the identity") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    const Svf v = Svf::from_velocity(smooth_field(48, 48, 4.0f, seed));
    const int n = choose_squaring_steps(v);
    const DeformationMap round_trip = compose_maps(exponentiate(v, n), invert(v, n));
    CHECK(max_displacement_from_identity(round_trip) < 0.1f);
  }
}

TEST_CASE("two extra squaring steps barely move the map") {
  const Svf v = Svf::from_velocity(smooth_field(48, 48, 4.0f, 11));
  const int n = choose_squaring_steps(v);
  const DeformationMap g1 = exponentiate(v, n);
  const DeformationMap g2 = exponentiate(v, n + 2);
  float worst = 0.0f;
  for (std::size_t k = 0; k < g1.size(); ++k) {
    worst = std::max(worst, std::hypot(g1.x[k] - g2.x[k], g1.y[k] - g2.y[k]));
  }
  CHECK(worst < 0.05f);
}

TEST_CASE("random smooth maps preserve orientation") {
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    const Svf v = Svf::from_velocity(smooth_field(48, 48, 4.0f, seed));
    const JacobianField jac = jacobian_determinant(exponentiate(v, choose_squaring_steps(v)));
    float lowest = 1.0f;
    for (float d : jac.det) lowest = std::min(lowest, d);
    CHECK(lowest > 0.0f);
  }
}

TEST_CASE("identity map has unit jacobian determinant") {
  const JacobianField jac = jacobian_determinant(DeformationMap::identity(12, 12));
  for (int i = 1; i < 11; ++i) {
    for (int j = 1; j < 11; ++j) {
      CHECK(jac.det[static_cast<std::size_t>(i) * 12 + j] == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }
}

TEST_CASE("uniform scaling has determinant s squared") {
  const float s = 0.8f;
  DeformationMap g(10, 10);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * 10 + j;
      g.x[k] = s * j;
      g.y[k] = s * i;
    }
  }
  const JacobianField jac = jacobian_determinant(g);
  for (int i = 1; i < 9; ++i) {
    for (int j = 1; j < 9; ++j) {
      CHECK(jac.det[static_cast<std::size_t>(i) * 10 + j] == doctest::Approx(s * s));
    }
  }
}

TEST_CASE("a folding map has negative determinant somewhere") {
  DeformationMap g = DeformationMap::identity(8, 8);
  for (int i = 0; i < 8; ++i) {
    g.x[static_cast<std::size_t>(i) * 8 + 4] = 2.0f;  // column 4 jumps left of column 3
  }
  const JacobianField jac = jacobian_determinant(g);
  float lowest = 1.0f;
  for (float d : jac.det) lowest = std::min(lowest, d);
  CHECK(lowest < 0.0f);
}

TEST_CASE("squaring step policy clamps to [4, 10]") {
  VectorField zero(16, 16);
  CHECK(choose_squaring_steps(Svf::from_velocity(zero)) == 4);

  VectorField four(32, 32);
  for (std::size_t k = 0; k < four.size(); ++k) four.x[k] = 4.0f;
  CHECK(choose_squaring_steps(Svf::from_velocity(four)) == 4);

  VectorField huge(32, 32);
  for (std::size_t k = 0; k < huge.size(); ++k) huge.x[k] = 1000.0f;
  CHECK(choose_squaring_steps(Svf::from_velocity(huge)) == 10);
}

TEST_CASE("exponentiate rejects non-finite velocities") {
  VectorField bad(8, 8);
  bad.x[20] = std::nanf("");
  CHECK_THROWS_AS(exponentiate(Svf::from_velocity(bad), 4), NumericError);
}

TEST_CASE("make_diffeo round trip warps an image back") {
  Rng rng(5);
  Image img(48, 48);
  for (float& v : img.data) v = rng.uniform();
  // Smooth the image so bilinear resampling error stays small.
  for (int pass = 0; pass < 3; ++pass) {
    Image tmp = img;
    for (int i = 1; i < 47; ++i) {
      for (int j = 1; j < 47; ++j) {
        img.at(i, j) = 0.25f * tmp.at(i, j) +
                       0.1875f * (tmp.at(i - 1, j) + tmp.at(i + 1, j) + tmp.at(i, j - 1) +
                                  tmp.at(i, j + 1));
      }
    }
  }
  const Svf v = Svf::from_velocity(smooth_field(48, 48, 2.0f, 31));
  const Diffeo d = make_diffeo(v);
  const Image back = warp_image(warp_image(img, d.forward), d.inverse);
  float worst = 0.0f;
  for (std::size_t k = 0; k < img.size(); ++k) {
    worst = std::max(worst, std::abs(back.data[k] - img.data[k]));
  }
  CHECK(worst < 0.02f);
}

TEST_CASE("velocity field pfm round-trip is exact") {
  VectorField f(6, 5);
  Rng rng(77);
  for (std::size_t k = 0; k < f.size(); ++k) {
    f.x[k] = rng.uniform(-4.0f, 4.0f);
    f.y[k] = rng.uniform(-4.0f, 4.0f);
  }
  const char* path = "/tmp/diffeocan_test_field.pfm";
  write_field_pfm(path, f);
  const VectorField back = read_field_pfm(path);
  REQUIRE(back.height == f.height);
  REQUIRE(back.width == f.width);
  for (std::size_t k = 0; k < f.size(); ++k) {
    CHECK(back.x[k] == f.x[k]);
    CHECK(back.y[k] == f.y[k]);
  }
  std::remove(path);
}
