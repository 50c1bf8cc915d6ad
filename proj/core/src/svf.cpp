#include "diffeocan/svf.hpp"

#include <cmath>

#include "diffeocan/common.hpp"

namespace diffeocan {

std::vector<float> boundary_taper(int h, int w, int margin) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("boundary_taper: non-positive shape");
  if (margin < 1) throw std::invalid_argument("boundary_taper: margin must be >= 1");
  std::vector<float> t(static_cast<std::size_t>(h) * w, 1.0f);
  constexpr float kPi = 3.14159265358979323846f;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int d = std::min(std::min(i, j), std::min(h - 1 - i, w - 1 - j));
      if (d < margin) {
        t[static_cast<std::size_t>(i) * w + j] =
            0.5f * (1.0f - std::cos(kPi * static_cast<float>(d) / static_cast<float>(margin)));
      }
    }
  }
  return t;
}

Svf Svf::from_velocity(VectorField v, int taper_margin) {
  Svf s;
  s.taper = boundary_taper(v.height, v.width, taper_margin);
  s.velocity = std::move(v);
  return s;
}

VectorField Svf::tapered() const {
  VectorField out(velocity.height, velocity.width);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.x[k] = velocity.x[k] * taper[k];
    out.y[k] = velocity.y[k] * taper[k];
  }
  return out;
}

float Svf::max_norm() const {
  float best = 0.0f;
  for (std::size_t k = 0; k < velocity.size(); ++k) {
    const float vx = velocity.x[k] * taper[k];
    const float vy = velocity.y[k] * taper[k];
    best = std::max(best, std::sqrt(vx * vx + vy * vy));
  }
  return best;
}

int choose_squaring_steps(const Svf& v) {
  const float norm = v.max_norm();
  if (!std::isfinite(norm)) throw std::invalid_argument("choose_squaring_steps: non-finite velocity");
  int n = 4;
  while (n < 10 && norm / static_cast<float>(1 << n) >= 0.5f) ++n;
  return n;
}

DeformationMap exponentiate(const Svf& v, int squaring_steps) {
  if (squaring_steps < 1) {
    throw std::invalid_argument("exponentiate: squaring_steps must be >= 1");
  }
  const int h = v.height();
  const int w = v.width();
  const float inv_scale = 1.0f / static_cast<float>(1 << squaring_steps);
  DeformationMap phi(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      const float vx = v.velocity.x[k] * v.taper[k];
      const float vy = v.velocity.y[k] * v.taper[k];
      if (!std::isfinite(vx) || !std::isfinite(vy)) {
        throw std::invalid_argument("exponentiate: non-finite velocity entry");
      }
      phi.x[k] = static_cast<float>(j) + vx * inv_scale;
      phi.y[k] = static_cast<float>(i) + vy * inv_scale;
    }
  }
  for (int s = 0; s < squaring_steps; ++s) {
    phi = compose_maps(phi, phi);
  }
  return phi;
}

DeformationMap invert(const Svf& v, int squaring_steps) {
  Svf neg;
  neg.taper = v.taper;
  neg.velocity = VectorField(v.height(), v.width());
  for (std::size_t k = 0; k < neg.velocity.size(); ++k) {
    neg.velocity.x[k] = -v.velocity.x[k];
    neg.velocity.y[k] = -v.velocity.y[k];
  }
  return exponentiate(neg, squaring_steps);
}

Diffeo make_diffeo(const Svf& v) {
  Diffeo d;
  d.squaring_steps = choose_squaring_steps(v);
  d.forward = exponentiate(v, d.squaring_steps);
  d.inverse = invert(v, d.squaring_steps);
  return d;
}

JacobianField jacobian_determinant(const DeformationMap& g) {
  const int h = g.height;
  const int w = g.width;
  if (h < 3 || w < 3) {
    throw std::invalid_argument("jacobian_determinant: map must be at least 3x3");
  }
  JacobianField jf;
  jf.height = h;
  jf.width = w;
  jf.det.assign(static_cast<std::size_t>(h) * w, 0.0f);
  auto ix = [&](int i, int j) { return static_cast<std::size_t>(i) * w + j; };
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      float dxdx, dydx;
      if (j == 0) {
        dxdx = g.x[ix(i, 1)] - g.x[ix(i, 0)];
        dydx = g.y[ix(i, 1)] - g.y[ix(i, 0)];
      } else if (j == w - 1) {
        dxdx = g.x[ix(i, w - 1)] - g.x[ix(i, w - 2)];
        dydx = g.y[ix(i, w - 1)] - g.y[ix(i, w - 2)];
      } else {
        dxdx = 0.5f * (g.x[ix(i, j + 1)] - g.x[ix(i, j - 1)]);
        dydx = 0.5f * (g.y[ix(i, j + 1)] - g.y[ix(i, j - 1)]);
      }
      float dxdy, dydy;
      if (i == 0) {
        dxdy = g.x[ix(1, j)] - g.x[ix(0, j)];
        dydy = g.y[ix(1, j)] - g.y[ix(0, j)];
      } else if (i == h - 1) {
        dxdy = g.x[ix(h - 1, j)] - g.x[ix(h - 2, j)];
        dydy = g.y[ix(h - 1, j)] - g.y[ix(h - 2, j)];
      } else {
        dxdy = 0.5f * (g.x[ix(i + 1, j)] - g.x[ix(i - 1, j)]);
        dydy = 0.5f * (g.y[ix(i + 1, j)] - g.y[ix(i - 1, j)]);
      }
      jf.det[ix(i, j)] = dxdx * dydy - dxdy * dydx;
    }
  }
  return jf;
}

}  // namespace diffeocan
