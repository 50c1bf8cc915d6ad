#pragma once

#include <string>
#include <vector>

#include "diffeocan/canon.hpp"
#include "diffeocan/dataset.hpp"
#include "diffeocan/energy.hpp"
#include "diffeocan/image.hpp"
#include "diffeocan/nets.hpp"

namespace diffeocan {

// Overlap scores with the convention that two empty masks agree perfectly.
float iou(const Mask& a, const Mask& b);
float dice(const Mask& a, const Mask& b);
float pixel_accuracy(const Mask& a, const Mask& b);

struct Quantiles {
  float mean = 0.0f;
  float min = 0.0f;
  float q1 = 0.0f;
  float median = 0.0f;
  float q3 = 0.0f;
  float max = 0.0f;
};

// Linear-interpolation quantiles plus the mean; throws on empty input.
Quantiles summarize(std::vector<float> values);

struct BenchInputs {
  // The plain task model; evaluated directly as "naive" and inside the
  // canonicalisation wrapper as "diffeonn".
  const InnerModel* inner = nullptr;
  // Same architecture trained on the warp-augmented set.
  const InnerModel* augmented = nullptr;
  EnergyModel energy;
  CanonConfig canon;
};

struct SegRow {
  int id = 0;
  std::string model;
  float iou = 0.0f;
  float dice = 0.0f;
  float acc = 0.0f;
};

struct ClsRow {
  int id = 0;
  std::string model;
  int pred = -1;
  int label = -1;
  float ce = 0.0f;
};

struct BenchReport {
  bool classification = false;
  std::vector<SegRow> seg_rows;
  std::vector<ClsRow> cls_rows;

  std::vector<float> metric(const std::string& model, const std::string& name) const;
};

// Evaluates naive, diffeonn and augmented on the same inputs.  Per-sample
// work is deterministic in (canon seed, sample id), so the report does not
// depend on the worker count.
BenchReport run_benchmark(const BenchInputs& in, const std::vector<Sample>& test, int jobs = 1);

std::string bench_csv(const BenchReport& report);
std::string bench_summary_json(const BenchReport& report);

struct InvariancePair {
  Image a;
  Image b;
};

struct InvarianceRow {
  int id = 0;
  float pre_gap = 0.0f;
  float post_gap = 0.0f;
  EnergyBreakdown a_pre, a_post, b_pre, b_post;
  Image a_canon, b_canon;
};

struct InvarianceReport {
  std::vector<InvarianceRow> rows;
  float median_pre = 0.0f;
  float median_post = 0.0f;
};

// Canonicalises both elements of each pair and reports relative gaps of the
// appearance energy (weighted reconstruction plus adversarial terms) before
// and after canonicalisation.  The regulariser is excluded: it prices the
// fields the optimiser chose, not how alike the results look.
InvarianceReport invariance_check(const std::vector<InvariancePair>& pairs,
                                  const EnergyModel& model, const CanonConfig& cfg,
                                  int jobs = 1);

std::string invariance_csv(const InvarianceReport& report);

struct EquivariancePair {
  Image x;
  Image xt;  // warp_image(x, g)
  DeformationMap g;
};

struct EquivarianceRow {
  int id = 0;
  float iou_value = 0.0f;
};

struct EquivarianceReport {
  std::vector<EquivarianceRow> rows;
  float mean_iou = 0.0f;
};

// Overlap between segmenting the warped image and warping the segmentation:
// the wrapper's approximate-equivariance statistic.
EquivarianceReport equivariance_check(const std::vector<EquivariancePair>& pairs,
                                      const InnerModel& seg, const EnergyModel& model,
                                      const CanonConfig& cfg, int jobs = 1);

std::string equivariance_csv(const EquivarianceReport& report);

}  // namespace diffeocan
