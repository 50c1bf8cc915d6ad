#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "diffeocan/canon.hpp"
#include "diffeocan/common.hpp"
#include "diffeocan/image.hpp"
#include "diffeocan/metrics.hpp"
#include "diffeocan/nets.hpp"

using namespace diffeocan;

namespace {

Mask mask_of(int h, int w, std::initializer_list<int> on) {
  Mask m(h, w);
  for (int k : on) m.data[static_cast<std::size_t>(k)] = 1;
  return m;
}

Image square_image(int n, int top, int left, int side) {
  Image img(n, n);
  for (int y = top; y < top + side; ++y) {
    for (int x = left; x < left + side; ++x) img.at(y, x) = 1.0f;
  }
  return img;
}

}  // namespace

TEST_CASE("overlap scores match hand values on a 2x2 grid") {
  // Top row against left column: one shared pixel, three in the union.
  const Mask a = mask_of(2, 2, {0, 1});
  const Mask b = mask_of(2, 2, {0, 2});
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(dice(a, b) == doctest::Approx(0.5));
  CHECK(pixel_accuracy(a, b) == doctest::Approx(0.5));
}

TEST_CASE("identical and disjoint masks hit the score extremes") {
  const Mask a = mask_of(3, 3, {0, 1, 4});
  CHECK(iou(a, a) == 1.0f);
  CHECK(dice(a, a) == 1.0f);
  CHECK(pixel_accuracy(a, a) == 1.0f);

  const Mask b = mask_of(3, 3, {2, 5});
  CHECK(iou(a, b) == 0.0f);
  CHECK(dice(a, b) == 0.0f);
}

TEST_CASE("two empty masks count as perfect agreement") {
  const Mask a(4, 4);
  const Mask b(4, 4);
  CHECK(iou(a, b) == 1.0f);
  CHECK(dice(a, b) == 1.0f);
  CHECK(pixel_accuracy(a, b) == 1.0f);
}

TEST_CASE("overlap scores reject shape mismatches") {
  CHECK_THROWS_AS(iou(Mask(2, 2), Mask(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(dice(Mask(2, 2), Mask(3, 2)), std::invalid_argument);
  CHECK_THROWS_AS(pixel_accuracy(Mask(2, 2), Mask(2, 3)), std::invalid_argument);
}

TEST_CASE("dice is the harmonic companion of overlap") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    Mask a(8, 8);
    Mask b(8, 8);
    for (std::size_t k = 0; k < a.data.size(); ++k) {
      a.data[k] = rng.uniform() < 0.4f ? 1 : 0;
      b.data[k] = rng.uniform() < 0.4f ? 1 : 0;
    }
    const float i = iou(a, b);
    CHECK(dice(a, b) == doctest::Approx(2.0f * i / (1.0f + i)).epsilon(1e-6));
  }
}

TEST_CASE("summary quantiles interpolate linearly") {
  const Quantiles q = summarize({5.0f, 1.0f, 3.0f, 2.0f, 4.0f});
  CHECK(q.min == 1.0f);
  CHECK(q.q1 == 2.0f);
  CHECK(q.median == 3.0f);
  CHECK(q.q3 == 4.0f);
  CHECK(q.max == 5.0f);
  CHECK(q.mean == doctest::Approx(3.0f));

  const Quantiles single = summarize({2.5f});
  CHECK(single.min == 2.5f);
  CHECK(single.median == 2.5f);
  CHECK(single.max == 2.5f);

  const Quantiles pair = summarize({1.0f, 2.0f});
  CHECK(pair.median == doctest::Approx(1.5f));

  CHECK_THROWS_AS(summarize({}), std::invalid_argument);
}

TEST_CASE("benchmark csv has the pinned header and row shape") {
  BenchReport report;
  report.classification = false;
  SegRow row;
  row.id = 3;
  row.model = "naive";
  row.iou = 0.5f;
  row.dice = 2.0f / 3.0f;
  row.acc = 0.75f;
  report.seg_rows.push_back(row);

  const std::string csv = bench_csv(report);
  CHECK(csv.rfind("id,model,iou,dice,acc\n", 0) == 0);
  CHECK(csv.find("3,naive,0.500000,0.666667,0.750000\n") != std::string::npos);
}

TEST_CASE("classification csv uses the classification header") {
  BenchReport report;
  report.classification = true;
  ClsRow row;
  row.id = 1;
  row.model = "diffeonn";
  row.pred = 2;
  row.label = 1;
  row.ce = 0.25f;
  report.cls_rows.push_back(row);

  const std::string csv = bench_csv(report);
  CHECK(csv.rfind("id,model,pred,label,ce\n", 0) == 0);
  CHECK(csv.find("1,diffeonn,2,1,0.250000\n") != std::string::npos);
}

TEST_CASE("summary json exposes per-model quantiles") {
  BenchReport report;
  report.classification = false;
  for (int k = 0; k < 3; ++k) {
    for (const char* model : {"naive", "diffeonn", "augmented"}) {
      SegRow row;
      row.id = k;
      row.model = model;
      row.iou = 0.5f + 0.1f * static_cast<float>(k);
      row.dice = row.iou;
      row.acc = row.iou;
      report.seg_rows.push_back(row);
    }
  }
  const std::string js = bench_summary_json(report);
  CHECK(js.find("\"naive\"") != std::string::npos);
  CHECK(js.find("\"diffeonn\"") != std::string::npos);
  CHECK(js.find("\"augmented\"") != std::string::npos);
  CHECK(js.find("\"iou\"") != std::string::npos);
  CHECK(js.find("\"median\"") != std::string::npos);
}

TEST_CASE("metric extraction filters by model name") {
  BenchReport report;
  for (int k = 0; k < 2; ++k) {
    SegRow row;
    row.id = k;
    row.model = k == 0 ? "naive" : "augmented";
    row.iou = k == 0 ? 0.25f : 0.75f;
    report.seg_rows.push_back(row);
  }
  const std::vector<float> naive = report.metric("naive", "iou");
  REQUIRE(naive.size() == 1);
  CHECK(naive[0] == 0.25f);
  const std::vector<float> aug = report.metric("augmented", "iou");
  REQUIRE(aug.size() == 1);
  CHECK(aug[0] == 0.75f);
}

TEST_CASE("a template-driven benchmark ranks an aligned head above chance") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);

  BenchInputs in;
  InnerModel seg = InnerModel::init_segmenter(n, 4, 21);
  in.inner = &seg;
  in.augmented = &seg;
  in.energy.template_image = &tmpl;
  in.canon.steps = 0;
  in.canon.siren_hidden = 8;
  in.canon.siren_layers = 2;

  std::vector<Sample> test;
  for (int k = 0; k < 2; ++k) {
    Sample s;
    s.id = k;
    s.image = square_image(n, 10 + k, 10, 8);
    Mask m(n, n);
    for (int y = 10 + k; y < 18 + k; ++y) {
      for (int x = 10; x < 18; ++x) m.at(y, x) = 1;
    }
    s.mask = m;
    test.push_back(std::move(s));
  }

  const BenchReport report = run_benchmark(in, test, 1);
  REQUIRE(report.seg_rows.size() == 6);
  // Zero canonicalisation steps force naive and diffeonn to agree exactly.
  const std::vector<float> naive = report.metric("naive", "iou");
  const std::vector<float> dnn = report.metric("diffeonn", "iou");
  REQUIRE(naive.size() == dnn.size());
  for (std::size_t k = 0; k < naive.size(); ++k) CHECK(naive[k] == dnn[k]);
}

TEST_CASE("benchmark reports are independent of the worker count") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);

  BenchInputs in;
  InnerModel seg = InnerModel::init_segmenter(n, 4, 23);
  in.inner = &seg;
  in.augmented = &seg;
  in.energy.template_image = &tmpl;
  in.canon.steps = 4;
  in.canon.lr = 1e-2f;
  in.canon.siren_hidden = 8;
  in.canon.siren_layers = 2;
  in.canon.seed = 5;

  std::vector<Sample> test;
  for (int k = 0; k < 3; ++k) {
    Sample s;
    s.id = k;
    s.image = square_image(n, 9 + k, 11, 8);
    s.mask = Mask(n, n);
    test.push_back(std::move(s));
  }

  const BenchReport serial = run_benchmark(in, test, 1);
  const BenchReport parallel = run_benchmark(in, test, 3);
  REQUIRE(serial.seg_rows.size() == parallel.seg_rows.size());
  for (std::size_t k = 0; k < serial.seg_rows.size(); ++k) {
    CHECK(serial.seg_rows[k].id == parallel.seg_rows[k].id);
    CHECK(serial.seg_rows[k].model == parallel.seg_rows[k].model);
    CHECK(serial.seg_rows[k].iou == parallel.seg_rows[k].iou);
  }
}

TEST_CASE("invariance rows report relative gaps and keep pair order") {
  const int n = 24;
  const Image tmpl = square_image(n, 8, 8, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc;
  cc.steps = 0;
  cc.siren_hidden = 8;
  cc.siren_layers = 2;

  std::vector<InvariancePair> pairs;
  for (int k = 0; k < 2; ++k) {
    InvariancePair p;
    p.a = square_image(n, 8, 8, 8);
    p.b = square_image(n, 8, 9 + k, 8);
    pairs.push_back(std::move(p));
  }

  const InvarianceReport report = invariance_check(pairs, model, cc, 1);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].id == 0);
  CHECK(report.rows[1].id == 1);
  for (const InvarianceRow& row : report.rows) {
    // With zero steps canonicalisation is the identity, so the gaps agree.
    CHECK(row.post_gap == doctest::Approx(row.pre_gap).epsilon(1e-6));
    CHECK(row.pre_gap >= 0.0f);
  }
  const std::string csv = invariance_csv(report);
  CHECK(csv.rfind("id,pre_gap,post_gap,a_pre_total,a_post_total,b_pre_total,b_post_total\n", 0) == 0);
}

TEST_CASE("equivariance scores identity transforms as perfect overlap") {
  const int n = 32;
  const Image tmpl = square_image(n, 12, 12, 8);
  EnergyModel model;
  model.template_image = &tmpl;

  CanonConfig cc;
  cc.steps = 0;
  cc.siren_hidden = 8;
  cc.siren_layers = 2;

  InnerModel seg = InnerModel::init_segmenter(n, 4, 29);

  std::vector<EquivariancePair> pairs;
  EquivariancePair p;
  p.x = square_image(n, 10, 10, 9);
  p.xt = p.x;
  p.g = DeformationMap::identity(n, n);
  pairs.push_back(std::move(p));

  const EquivarianceReport report = equivariance_check(pairs, seg, model, cc, 1);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].iou_value == doctest::Approx(1.0f));
  CHECK(report.mean_iou == doctest::Approx(1.0f));

  const std::string csv = equivariance_csv(report);
  CHECK(csv.rfind("id,iou\n", 0) == 0);
}
