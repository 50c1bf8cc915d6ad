#pragma once

#include <vector>

#include "diffeocan/image.hpp"
#include "diffeocan/nets.hpp"
#include "diffeocan/svf.hpp"
#include "diffeocan/tape.hpp"

namespace diffeocan {

struct EnergyWeights {
  float lambda_vae = 1e-5f;
  float lambda_adv = 0.01f;
  float lambda_grad = 1.0f;
  float lambda_jac = 10.0f;
};

// Unweighted term values plus the weighted total actually optimised.
struct EnergyBreakdown {
  float e_vae = 0.0f;
  float e_adv = 0.0f;
  float e_grad = 0.0f;
  float e_jac = 0.0f;
  float total = 0.0f;
};

// Scoring backends for the appearance part of the energy.  Any subset may be
// present; absent terms contribute zero.  `template_image` is a plain
// squared-error stand-in that fills the vae slot, handy for optimiser tests
// that should not depend on trained weights.
struct EnergyModel {
  const VaeNet* vae = nullptr;
  const Discriminator* disc = nullptr;
  const Image* template_image = nullptr;
};

struct CanonEnergyNodes {
  std::vector<Tape::NodeId> siren_ids;
  Tape::NodeId raw_x = Tape::kInvalid;
  Tape::NodeId raw_y = Tape::kInvalid;
  Tape::NodeId tapered_x = Tape::kInvalid;
  Tape::NodeId tapered_y = Tape::kInvalid;
  Tape::NodeId map_x = Tape::kInvalid;
  Tape::NodeId map_y = Tape::kInvalid;
  Tape::NodeId x_c = Tape::kInvalid;
  Tape::NodeId e_vae = Tape::kInvalid;
  Tape::NodeId e_adv = Tape::kInvalid;
  Tape::NodeId e_grad = Tape::kInvalid;
  Tape::NodeId e_jac = Tape::kInvalid;
  Tape::NodeId total = Tape::kInvalid;
  int squaring_steps = 0;
};

// Records the full objective: field network forward pass, taper, map
// exponentiation by scaling and squaring, image warp, appearance terms on the
// warped image, and smoothness plus folding penalties on the field and map.
// Field weights enter as trainable parameters; scorer weights enter as
// constants.  Passing `siren_ids` reuses already-inserted leaves (in net.w
// order) instead of inserting fresh parameters.
CanonEnergyNodes build_canon_energy(Tape& tape, const SirenNet& net, const EnergyModel& model,
                                    const EnergyWeights& weights, const Image& x,
                                    float velocity_scale, int squaring_steps,
                                    int taper_margin = 3,
                                    const std::vector<Tape::NodeId>* siren_ids = nullptr);

// Evaluates the same objective without keeping a tape around.
EnergyBreakdown canon_energy(const SirenNet& net, const EnergyModel& model,
                             const EnergyWeights& weights, const Image& x, float velocity_scale,
                             int squaring_steps, int taper_margin = 3);

// Appearance terms of a plain image (no field, no regularisers).
EnergyBreakdown xe_energy(const EnergyModel& model, const EnergyWeights& weights, const Image& x);

EnergyBreakdown read_breakdown(const Tape& tape, const CanonEnergyNodes& nodes);

// Unweighted regulariser terms of a field and the map generated from it:
// mean squared forward difference of the tapered velocity, and mean rectified
// negative Jacobian determinant of the map.
struct RegTerms {
  float e_grad = 0.0f;
  float e_jac = 0.0f;
};
RegTerms e_reg(const Svf& v, const DeformationMap& g);

// Unweighted appearance terms of an already-warped image.
struct SimilarityTerms {
  float e_vae = 0.0f;
  float e_adv = 0.0f;
};
SimilarityTerms e_similarity(const Image& x_warped, const VaeNet* vae, const Discriminator* disc);

// Mean squared error to a fixed reference image.
float e_template(const Image& x_warped, const Image& reference);

}  // namespace diffeocan
