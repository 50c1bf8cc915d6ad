#pragma once

#include "diffeocan/image.hpp"

namespace diffeocan {

// Boundary taper: 0 on the outermost pixel ring, cosine ramp up to 1 beyond
// `margin` pixels from the border.  Keeps generated maps fixed on the domain
// boundary.
std::vector<float> boundary_taper(int h, int w, int margin = 3);

// Stationary velocity field.  The raw field is stored together with its
// boundary taper; all flow computations use the tapered product.
struct Svf {
  VectorField velocity;
  std::vector<float> taper;

  static Svf from_velocity(VectorField v, int taper_margin = 3);

  int height() const { return velocity.height; }
  int width() const { return velocity.width; }
  VectorField tapered() const;
  // Largest Euclidean norm of the tapered field, in pixels.
  float max_norm() const;
};

// Forward and inverse maps generated from one velocity field.
struct Diffeo {
  DeformationMap forward;
  DeformationMap inverse;
  int squaring_steps = 0;
};

// Per-pixel determinant of the spatial Jacobian of a map.
struct JacobianField {
  int height = 0;
  int width = 0;
  std::vector<float> det;
};

// Smallest step count n in [4, 10] for which the largest tapered velocity
// scaled by 2^-n stays below half a pixel.
int choose_squaring_steps(const Svf& v);

// Group exponential by scaling and squaring: the tapered field is divided by
// 2^n, added to the identity, and the resulting map is composed with itself
// n times.  Requires squaring_steps >= 1 and finite velocities.
DeformationMap exponentiate(const Svf& v, int squaring_steps);

// Exponential of the negated field; inverse of exponentiate for fields that
// stay well clear of folding.
DeformationMap invert(const Svf& v, int squaring_steps);

// Builds forward and inverse maps with an automatically chosen step count.
Diffeo make_diffeo(const Svf& v);

// Jacobian determinant from central differences in the interior and
// one-sided differences on the boundary.  Requires h, w >= 3.
JacobianField jacobian_determinant(const DeformationMap& g);

}  // namespace diffeocan
