#pragma once

#include <cstdint>
#include <vector>

#include "diffeocan/energy.hpp"
#include "diffeocan/image.hpp"
#include "diffeocan/nets.hpp"

namespace diffeocan {

struct CanonConfig {
  int steps = 100;
  float lr = 1e-4f;
  EnergyWeights weights;
  float velocity_scale = 4.0f;
  int siren_hidden = 128;
  int siren_layers = 3;
  float siren_omega0 = 30.0f;
  int squaring_cap = 10;
  int taper_margin = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CanonResult {
  DeformationMap g_forward;
  DeformationMap g_inverse;
  Image x_c;
  // Energy before each update plus one final evaluation: steps + 1 entries.
  std::vector<EnergyBreakdown> trace;
  // Index into trace of the retained iterate; 0 means the identity start won.
  int best_step = 0;
  bool fell_back_to_identity = false;
  int squaring_steps = 0;
};

// Fits a velocity field that minimises the canonicalisation energy of one
// image, keeping the best iterate seen.  The field network starts at the
// identity map, so the result can never score worse than the input itself.
CanonResult canonicalise(const Image& x, const EnergyModel& model, const CanonConfig& cfg);

// Runs the task head in canonical coordinates and maps the answer back
// through the inverse deformation.
Mask equivariant_segment(const InnerModel& seg, const Image& x, const EnergyModel& model,
                         const CanonConfig& cfg, float tau = 0.5f);

// Classification needs no pull-back: the label of the canonicalised image is
// the prediction.
int invariant_classify(const InnerModel& cls, const Image& x, const EnergyModel& model,
                       const CanonConfig& cfg);

}  // namespace diffeocan
