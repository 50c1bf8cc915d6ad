#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "diffeocan/canon.hpp"
#include "diffeocan/common.hpp"
#include "diffeocan/energy.hpp"
#include "diffeocan/image.hpp"
#include "diffeocan/metrics.hpp"
#include "diffeocan/nets.hpp"

using namespace diffeocan;

namespace {

Image square_image(int n, int top, int left, int side) {
  Image img(n, n);
  for (int y = top; y < top + side; ++y) {
    for (int x = left; x < left + side; ++x) img.at(y, x) = 1.0f;
  }
  return img;
}

Image noise_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  Rng rng(seed);
  for (float& v : img.data) v = rng.uniform();
  return img;
}

CanonConfig tiny_config(int steps) {
  CanonConfig cc;
  cc.steps = steps;
  cc.lr = 1e-2f;
  cc.siren_hidden = 16;
  cc.siren_layers = 2;
  cc.weights.lambda_vae = 1.0f;
  cc.weights.lambda_adv = 0.0f;
  cc.weights.lambda_grad = 0.05f;
  cc.weights.lambda_jac = 10.0f;
  cc.seed = 99;
  return cc;
}

}  // namespace

TEST_CASE("zero steps returns the input untouched") {
  const int n = 24;
  const Image x = noise_image(n, n, 5);
  const Image tmpl = square_image(n, 8, 8, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(0);
  const CanonResult res = canonicalise(x, model, cc);

  CHECK(res.x_c.data == x.data);
  CHECK(res.trace.size() == 1);
  CHECK(res.best_step == 0);
  CHECK(res.fell_back_to_identity);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      CHECK(res.g_forward.x[static_cast<std::size_t>(i) * n + j] == static_cast<float>(j));
      CHECK(res.g_forward.y[static_cast<std::size_t>(i) * n + j] == static_cast<float>(i));
    }
  }
}

TEST_CASE("trace has one entry per step plus the final evaluation") {
  const int n = 16;
  const Image x = noise_image(n, n, 6);
  const Image tmpl = square_image(n, 4, 4, 6);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(7);
  const CanonResult res = canonicalise(x, model, cc);
  CHECK(res.trace.size() == 8);
}

TEST_CASE("the retained iterate never scores above the identity start") {
  const int n = 24;
  const Image x = square_image(n, 9, 7, 8);
  const Image tmpl = square_image(n, 8, 8, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(40);
  const CanonResult res = canonicalise(x, model, cc);
  const float best = res.trace[static_cast<std::size_t>(res.best_step)].total;
  CHECK(best <= res.trace.front().total);
  float lowest = res.trace.front().total;
  for (const EnergyBreakdown& bd : res.trace) lowest = std::min(lowest, bd.total);
  CHECK(best == doctest::Approx(lowest));
}

TEST_CASE("a translated square is pulled toward the template") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);
  const Image x = square_image(n, 12, 15, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(80);
  const CanonResult res = canonicalise(x, model, cc);

  const float before = e_template(x, tmpl);
  const float after = e_template(res.x_c, tmpl);
  CHECK(res.best_step > 0);
  CHECK_FALSE(res.fell_back_to_identity);
  CHECK(after < 0.6f * before);
}

TEST_CASE("the canonical image is the input warped by the forward map") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);
  const Image x = square_image(n, 12, 15, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(30);
  const CanonResult res = canonicalise(x, model, cc);
  const Image rebuilt = warp_image(x, res.g_forward);
  REQUIRE(rebuilt.data.size() == res.x_c.data.size());
  for (std::size_t k = 0; k < rebuilt.data.size(); ++k) {
    CHECK(rebuilt.data[k] == doctest::Approx(res.x_c.data[k]).epsilon(1e-6));
  }
}

TEST_CASE("forward and inverse maps compose to near identity") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);
  const Image x = square_image(n, 12, 15, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(60);
  const CanonResult res = canonicalise(x, model, cc);
  REQUIRE_FALSE(res.fell_back_to_identity);

  const DeformationMap round = compose_maps(res.g_forward, res.g_inverse);
  float worst = 0.0f;
  for (int i = 4; i < n - 4; ++i) {
    for (int j = 4; j < n - 4; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      worst = std::max(worst, std::abs(round.x[k] - static_cast<float>(j)));
      worst = std::max(worst, std::abs(round.y[k] - static_cast<float>(i)));
    }
  }
  CHECK(worst < 0.1f);
}

TEST_CASE("config validation rejects bad values") {
  CanonConfig cc;
  cc.steps = -1;
  CHECK_THROWS_AS(cc.validate(), std::invalid_argument);
  cc = CanonConfig{};
  cc.lr = 0.0f;
  CHECK_THROWS_AS(cc.validate(), std::invalid_argument);
  cc = CanonConfig{};
  cc.velocity_scale = -2.0f;
  CHECK_THROWS_AS(cc.validate(), std::invalid_argument);
  cc = CanonConfig{};
  cc.siren_hidden = 0;
  CHECK_THROWS_AS(cc.validate(), std::invalid_argument);
  cc = CanonConfig{};
  cc.squaring_cap = 0;
  CHECK_THROWS_AS(cc.validate(), std::invalid_argument);
}

TEST_CASE("segmentation with zero steps equals the plain thresholded head") {
  const int n = 32;
  const Image x = square_image(n, 10, 10, 9);
  InnerModel seg = InnerModel::init_segmenter(n, 4, 3);
  const Image tmpl = square_image(n, 12, 12, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(0);
  const Mask via_canon = equivariant_segment(seg, x, model, cc);
  const Mask naive = threshold_mask(segment_probs(seg, x), 0.5f);
  CHECK(via_canon.data == naive.data);
}

TEST_CASE("classification with zero steps equals the plain argmax") {
  const int n = 32;
  const Image x = square_image(n, 10, 10, 9);
  InnerModel cls = InnerModel::init_classifier(n, 3, 4, 7);
  const Image tmpl = square_image(n, 12, 12, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(0);
  const int via_canon = invariant_classify(cls, x, model, cc);
  const int naive = argmax_class(classify_logits(cls, x));
  CHECK(via_canon == naive);
}

TEST_CASE("canonicalisation is deterministic in the seed") {
  const int n = 24;
  const Image tmpl = square_image(n, 8, 8, 8);
  const Image x = square_image(n, 8, 10, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc = tiny_config(20);
  const CanonResult a = canonicalise(x, model, cc);
  const CanonResult b = canonicalise(x, model, cc);
  CHECK(a.x_c.data == b.x_c.data);
  CHECK(a.best_step == b.best_step);
  CHECK(a.g_forward.x == b.g_forward.x);
  CHECK(a.g_forward.y == b.g_forward.y);
}
