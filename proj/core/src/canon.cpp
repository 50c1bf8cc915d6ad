#include "diffeocan/canon.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "diffeocan/common.hpp"
#include "diffeocan/svf.hpp"
#include "diffeocan/tape.hpp"

namespace diffeocan {

void CanonConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("CanonConfig: steps must be >= 0");
  if (!(lr > 0.0f)) throw std::invalid_argument("CanonConfig: lr must be positive");
  if (!(velocity_scale > 0.0f)) {
    throw std::invalid_argument("CanonConfig: velocity_scale must be positive");
  }
  if (siren_hidden < 1 || siren_layers < 1) {
    throw std::invalid_argument("CanonConfig: field network dimensions must be >= 1");
  }
  if (!(siren_omega0 > 0.0f)) throw std::invalid_argument("CanonConfig: omega0 must be positive");
  if (squaring_cap < 4 || squaring_cap > 16) {
    throw std::invalid_argument("CanonConfig: squaring_cap must be in [4, 16]");
  }
  if (taper_margin < 1) throw std::invalid_argument("CanonConfig: taper_margin must be >= 1");
}

namespace {

// Step count fixed for the whole run from the velocity magnitude bound, so
// every iterate flows through the same graph shape.
int fixed_squaring_steps(float velocity_scale, int cap) {
  int n = 4;
  while (n < cap && velocity_scale / static_cast<float>(1 << n) >= 0.5f) ++n;
  return n;
}

}  // namespace

CanonResult canonicalise(const Image& x, const EnergyModel& model, const CanonConfig& cfg) {
  cfg.validate();
  if (x.empty() || x.height < 3 || x.width < 3) {
    throw std::invalid_argument("canonicalise: image too small");
  }
  const int n_sq = fixed_squaring_steps(cfg.velocity_scale, cfg.squaring_cap);
  SirenNet net =
      SirenNet::init(cfg.siren_hidden, cfg.siren_layers, cfg.siren_omega0, cfg.seed);
  Adam opt(cfg.lr);

  CanonResult res;
  res.squaring_steps = n_sq;
  VectorField best_v(x.height, x.width);
  float best_total = std::numeric_limits<float>::infinity();

  auto evaluate = [&](bool update) {
    Tape tape;
    const CanonEnergyNodes nodes =
        build_canon_energy(tape, net, model, cfg.weights, x, cfg.velocity_scale, n_sq,
                           cfg.taper_margin);
    const EnergyBreakdown b = read_breakdown(tape, nodes);
    if (!std::isfinite(b.total)) {
      throw NumericError("canonicalise: non-finite energy at step " +
                         std::to_string(res.trace.size()) + " (e_vae=" + std::to_string(b.e_vae) +
                         ", e_adv=" + std::to_string(b.e_adv) +
                         ", e_grad=" + std::to_string(b.e_grad) +
                         ", e_jac=" + std::to_string(b.e_jac) +
                         ", total=" + std::to_string(b.total) + ")");
    }
    res.trace.push_back(b);
    if (b.total < best_total) {
      best_total = b.total;
      res.best_step = static_cast<int>(res.trace.size()) - 1;
      best_v.x = tape.value(nodes.raw_x).data;
      best_v.y = tape.value(nodes.raw_y).data;
    }
    if (update) {
      tape.backward(nodes.total);
      std::vector<Tensor> grads;
      grads.reserve(nodes.siren_ids.size());
      for (Tape::NodeId id : nodes.siren_ids) grads.push_back(tape.grad(id));
      opt.step(net.w, grads);
    }
  };

  for (int step = 0; step < cfg.steps; ++step) evaluate(true);
  evaluate(false);
  res.fell_back_to_identity = res.best_step == 0;

  const Svf svf = Svf::from_velocity(best_v, cfg.taper_margin);
  res.g_forward = exponentiate(svf, n_sq);
  res.g_inverse = invert(svf, n_sq);
  res.x_c = warp_image(x, res.g_forward);
  return res;
}

Mask equivariant_segment(const InnerModel& seg, const Image& x, const EnergyModel& model,
                         const CanonConfig& cfg, float tau) {
  const CanonResult res = canonicalise(x, model, cfg);
  const Image probs_canonical = segment_probs(seg, res.x_c);
  const Image probs_input = warp_image(probs_canonical, res.g_inverse);
  return threshold_mask(probs_input, tau);
}

int invariant_classify(const InnerModel& cls, const Image& x, const EnergyModel& model,
                       const CanonConfig& cfg) {
  const CanonResult res = canonicalise(x, model, cfg);
  return argmax_class(classify_logits(cls, res.x_c));
}

}  // namespace diffeocan
