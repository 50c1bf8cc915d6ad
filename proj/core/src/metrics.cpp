#include "diffeocan/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace diffeocan {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

struct Overlap {
  std::size_t inter = 0;
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t match = 0;
  std::size_t total = 0;
};

Overlap overlap(const Mask& a, const Mask& b) {
  Overlap o;
  o.total = a.data.size();
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    const bool pa = a.data[k] != 0;
    const bool pb = b.data[k] != 0;
    o.inter += pa && pb;
    o.a += pa;
    o.b += pb;
    o.match += pa == pb;
  }
  return o;
}

// Runs fn(i) for i in [0, n) across up to `jobs` threads.  Work items must be
// independent and write only to their own slots.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
  return buf;
}

float rel_gap(float a, float b) {
  const float scale = 0.5f * (std::fabs(a) + std::fabs(b));
  return std::fabs(a - b) / std::max(1e-12f, scale);
}

float median_of(std::vector<float> v) {
  if (v.empty()) return 0.0f;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5f * (v[n / 2 - 1] + v[n / 2]);
}

float cross_entropy(const std::vector<float>& logits, int label) {
  double m = logits[0];
  for (float z : logits) m = std::max(m, static_cast<double>(z));
  double lse = 0.0;
  for (float z : logits) lse += std::exp(static_cast<double>(z) - m);
  return static_cast<float>(std::log(lse) - (static_cast<double>(logits[static_cast<std::size_t>(label)]) - m));
}

}  // namespace

float iou(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "iou");
  const Overlap o = overlap(a, b);
  const std::size_t uni = o.a + o.b - o.inter;
  if (uni == 0) return 1.0f;
  return static_cast<float>(o.inter) / static_cast<float>(uni);
}

float dice(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "dice");
  const Overlap o = overlap(a, b);
  if (o.a + o.b == 0) return 1.0f;
  return 2.0f * static_cast<float>(o.inter) / static_cast<float>(o.a + o.b);
}

float pixel_accuracy(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "pixel_accuracy");
  const Overlap o = overlap(a, b);
  return static_cast<float>(o.match) / static_cast<float>(o.total);
}

Quantiles summarize(std::vector<float> values) {
  if (values.empty()) throw std::invalid_argument("summarize: empty value list");
  Quantiles q;
  double acc = 0.0;
  for (float v : values) acc += v;
  q.mean = static_cast<float>(acc / static_cast<double>(values.size()));
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<float>((1.0 - frac) * values[lo] + frac * values[hi]);
  };
  q.min = values.front();
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  q.max = values.back();
  return q;
}

std::vector<float> BenchReport::metric(const std::string& model, const std::string& name) const {
  std::vector<float> out;
  if (classification) {
    for (const ClsRow& r : cls_rows) {
      if (r.model != model) continue;
      if (name == "acc") {
        out.push_back(r.pred == r.label ? 1.0f : 0.0f);
      } else if (name == "ce") {
        out.push_back(r.ce);
      } else {
        throw std::invalid_argument("BenchReport::metric: unknown metric '" + name + "'");
      }
    }
  } else {
    for (const SegRow& r : seg_rows) {
      if (r.model != model) continue;
      if (name == "iou") {
        out.push_back(r.iou);
      } else if (name == "dice") {
        out.push_back(r.dice);
      } else if (name == "acc") {
        out.push_back(r.acc);
      } else {
        throw std::invalid_argument("BenchReport::metric: unknown metric '" + name + "'");
      }
    }
  }
  return out;
}

BenchReport run_benchmark(const BenchInputs& in, const std::vector<Sample>& test, int jobs) {
  if (in.inner == nullptr || in.augmented == nullptr) {
    throw std::invalid_argument("run_benchmark: missing model");
  }
  if (test.empty()) throw std::invalid_argument("run_benchmark: empty test set");
  BenchReport report;
  report.classification = in.inner->kind == InnerKind::Classifier;
  const int n = static_cast<int>(test.size());
  const char* model_names[3] = {"naive", "diffeonn", "augmented"};

  if (report.classification) {
    report.cls_rows.resize(static_cast<std::size_t>(n) * 3);
  } else {
    report.seg_rows.resize(static_cast<std::size_t>(n) * 3);
  }

  parallel_for(n, jobs, [&](int i) {
    const Sample& s = test[static_cast<std::size_t>(i)];
    CanonConfig cfg = in.canon;
    cfg.seed = mix_seed(in.canon.seed, static_cast<std::uint64_t>(s.id));
    if (report.classification) {
      const CanonResult canon = canonicalise(s.image, in.energy, cfg);
      for (int m = 0; m < 3; ++m) {
        const InnerModel& net = m == 2 ? *in.augmented : *in.inner;
        const Image& input = m == 1 ? canon.x_c : s.image;
        const std::vector<float> logits = classify_logits(net, input);
        ClsRow row;
        row.id = s.id;
        row.model = model_names[m];
        row.pred = argmax_class(logits);
        row.label = s.label;
        row.ce = cross_entropy(logits, s.label);
        report.cls_rows[static_cast<std::size_t>(i) * 3 + m] = std::move(row);
      }
    } else {
      const CanonResult canon = canonicalise(s.image, in.energy, cfg);
      for (int m = 0; m < 3; ++m) {
        const InnerModel& net = m == 2 ? *in.augmented : *in.inner;
        Mask pred;
        if (m == 1) {
          const Image probs = segment_probs(net, canon.x_c);
          pred = threshold_mask(warp_image(probs, canon.g_inverse), 0.5f);
        } else {
          pred = threshold_mask(segment_probs(net, s.image), 0.5f);
        }
        SegRow row;
        row.id = s.id;
        row.model = model_names[m];
        row.iou = iou(pred, s.mask);
        row.dice = dice(pred, s.mask);
        row.acc = pixel_accuracy(pred, s.mask);
        report.seg_rows[static_cast<std::size_t>(i) * 3 + m] = std::move(row);
      }
    }
  });
  return report;
}

std::string bench_csv(const BenchReport& report) {
  std::string out;
  if (report.classification) {
    out = "id,model,pred,label,ce\n";
    for (const ClsRow& r : report.cls_rows) {
      out += std::to_string(r.id) + "," + r.model + "," + std::to_string(r.pred) + "," +
             std::to_string(r.label) + "," + fmt_float(r.ce) + "\n";
    }
  } else {
    out = "id,model,iou,dice,acc\n";
    for (const SegRow& r : report.seg_rows) {
      out += std::to_string(r.id) + "," + r.model + "," + fmt_float(r.iou) + "," +
             fmt_float(r.dice) + "," + fmt_float(r.acc) + "\n";
    }
  }
  return out;
}

std::string bench_summary_json(const BenchReport& report) {
  nlohmann::json root;
  const std::vector<std::string> models = {"naive", "diffeonn", "augmented"};
  const std::vector<std::string> metrics =
      report.classification ? std::vector<std::string>{"acc", "ce"}
                            : std::vector<std::string>{"iou", "dice", "acc"};
  for (const std::string& model : models) {
    for (const std::string& name : metrics) {
      const Quantiles q = summarize(report.metric(model, name));
      nlohmann::json& slot = root[model][name];
      slot["mean"] = q.mean;
      slot["min"] = q.min;
      slot["q1"] = q.q1;
      slot["median"] = q.median;
      slot["q3"] = q.q3;
      slot["max"] = q.max;
    }
  }
  return root.dump(2) + "\n";
}

InvarianceReport invariance_check(const std::vector<InvariancePair>& pairs,
                                  const EnergyModel& model, const CanonConfig& cfg, int jobs) {
  InvarianceReport report;
  const int n = static_cast<int>(pairs.size());
  report.rows.resize(static_cast<std::size_t>(n));
  parallel_for(n, jobs, [&](int i) {
    const InvariancePair& p = pairs[static_cast<std::size_t>(i)];
    CanonConfig ca = cfg;
    ca.seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i));
    CanonConfig cb = cfg;
    cb.seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i) + 1);
    const CanonResult ra = canonicalise(p.a, model, ca);
    const CanonResult rb = canonicalise(p.b, model, cb);
    InvarianceRow row;
    row.id = i;
    row.a_pre = ra.trace.front();
    row.a_post = ra.trace[static_cast<std::size_t>(ra.best_step)];
    row.b_pre = rb.trace.front();
    row.b_post = rb.trace[static_cast<std::size_t>(rb.best_step)];
    // Gap of the appearance part only: the regulariser prices the fields the
    // optimiser chose, not how alike the canonicalised images look.
    const auto xe_part = [&cfg](const EnergyBreakdown& bd) {
      return cfg.weights.lambda_vae * bd.e_vae + cfg.weights.lambda_adv * bd.e_adv;
    };
    row.pre_gap = rel_gap(xe_part(row.a_pre), xe_part(row.b_pre));
    row.post_gap = rel_gap(xe_part(row.a_post), xe_part(row.b_post));
    row.a_canon = ra.x_c;
    row.b_canon = rb.x_c;
    report.rows[static_cast<std::size_t>(i)] = std::move(row);
  });
  std::vector<float> pre, post;
  for (const InvarianceRow& r : report.rows) {
    pre.push_back(r.pre_gap);
    post.push_back(r.post_gap);
  }
  report.median_pre = median_of(pre);
  report.median_post = median_of(post);
  return report;
}

std::string invariance_csv(const InvarianceReport& report) {
  std::string out = "id,pre_gap,post_gap,a_pre_total,a_post_total,b_pre_total,b_post_total\n";
  for (const InvarianceRow& r : report.rows) {
    out += std::to_string(r.id) + "," + fmt_float(r.pre_gap) + "," + fmt_float(r.post_gap) +
           "," + fmt_float(r.a_pre.total) + "," + fmt_float(r.a_post.total) + "," +
           fmt_float(r.b_pre.total) + "," + fmt_float(r.b_post.total) + "\n";
  }
  return out;
}

EquivarianceReport equivariance_check(const std::vector<EquivariancePair>& pairs,
                                      const InnerModel& seg, const EnergyModel& model,
                                      const CanonConfig& cfg, int jobs) {
  EquivarianceReport report;
  const int n = static_cast<int>(pairs.size());
  report.rows.resize(static_cast<std::size_t>(n));
  parallel_for(n, jobs, [&](int i) {
    const EquivariancePair& p = pairs[static_cast<std::size_t>(i)];
    CanonConfig ct = cfg;
    ct.seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i));
    CanonConfig cx = cfg;
    cx.seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i) + 1);
    const Mask lhs = equivariant_segment(seg, p.xt, model, ct);
    const Mask fx = equivariant_segment(seg, p.x, model, cx);
    const Mask rhs = warp_mask(fx, p.g);
    EquivarianceRow row;
    row.id = i;
    row.iou_value = iou(lhs, rhs);
    report.rows[static_cast<std::size_t>(i)] = row;
  });
  double acc = 0.0;
  for (const EquivarianceRow& r : report.rows) acc += r.iou_value;
  report.mean_iou = report.rows.empty() ? 0.0f
                                        : static_cast<float>(acc / static_cast<double>(n));
  return report;
}

std::string equivariance_csv(const EquivarianceReport& report) {
  std::string out = "id,iou\n";
  for (const EquivarianceRow& r : report.rows) {
    out += std::to_string(r.id) + "," + fmt_float(r.iou_value) + "\n";
  }
  return out;
}

}  // namespace diffeocan
