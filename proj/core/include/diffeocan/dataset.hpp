#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffeocan/common.hpp"
#include "diffeocan/image.hpp"

namespace diffeocan {

// One labelled example.  Segmentation samples carry a mask; classification
// samples carry a class id.  `digit` keeps the source digit for loaders that
// relabel by topology.
struct Sample {
  int id = 0;
  Image image;
  Mask mask;
  int label = -1;
  int digit = -1;
  std::string provenance = "canonical";
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct SquaresConfig {
  int image_size = 64;
  int outer_min = 28;
  int outer_max = 48;
  int inner_min = 8;
  int inner_max = 20;
  int border_margin = 4;
  float noise_sigma = 0.05f;
  std::uint64_t seed = 0;

  void validate() const;
};

// Nested axis-aligned squares: three disjoint intensity bands (background,
// outer, inner) plus clamped Gaussian noise.  The mask is the exact analytic
// inner-square pixel set.  Deterministic in (seed, id).
std::vector<Sample> gen_squares(int n, const SquaresConfig& cfg);

// Sequentially splits a sample list; counts must sum to the list size.
DatasetSplit split_samples(std::vector<Sample> samples, int n_train, int n_val, int n_test);

struct RbfConfig {
  float spacing = 16.0f;
  float bandwidth = 8.0f;
  float max_disp = 6.0f;
  float min_jacobian = 0.05f;
  int max_attempts = 50;
  int inverse_iters = 20;
  int taper_margin = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RbfDiffeo {
  DeformationMap forward;
  DeformationMap inverse;
  int attempts = 1;
};

// Random smooth warp: Gaussian bumps on a control-point grid with uniform
// two-axis weights, boundary-tapered, added to the identity.  Draws are
// rejected until the Jacobian determinant stays above the configured floor.
// The inverse is computed by fixed-point iteration.
RbfDiffeo sample_rbf_diffeo(Rng& rng, const RbfConfig& cfg, int h, int w);
RbfDiffeo sample_rbf_diffeo(const RbfConfig& cfg, int h, int w);

// Warps every sample with its own freshly sampled map (seeded from cfg.seed
// and the sample id).  Masks are warped as floats and re-thresholded; class
// labels are copied unchanged.
std::vector<Sample> make_transformed(const std::vector<Sample>& src, const RbfConfig& cfg);

// Big-endian IDX pair.  Pixels scaled to [0, 1]; `digit` keeps the stored
// label and `label` is the hole count of the thresholded image, capped at 2.
std::vector<Sample> load_mnist_idx(const std::string& images_path,
                                   const std::string& labels_path);

}  // namespace diffeocan
