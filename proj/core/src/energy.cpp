#include "diffeocan/energy.hpp"

#include <stdexcept>

#include "diffeocan/svf.hpp"

namespace diffeocan {

namespace {

Tape::NodeId scalar_const(Tape& t, float v) { return t.constant(Tensor::scalar(v)); }

Tape::NodeId stencil_conv(Tape& t, Tape::NodeId plane3, std::vector<int> kshape,
                          std::vector<float> kdata) {
  Tensor k = Tensor::zeros(std::move(kshape));
  k.data = std::move(kdata);
  return t.conv2d(plane3, t.constant(std::move(k)), 1, 0);
}

// Mean squared forward difference of both velocity planes, normalised by the
// pixel count so the value is resolution independent.
Tape::NodeId grad_term(Tape& t, Tape::NodeId vx, Tape::NodeId vy, int h, int w) {
  const Tape::NodeId px = t.reshape(vx, {1, h, w});
  const Tape::NodeId py = t.reshape(vy, {1, h, w});
  Tape::NodeId acc = Tape::kInvalid;
  for (const Tape::NodeId p : {px, py}) {
    const Tape::NodeId dx = stencil_conv(t, p, {1, 1, 1, 2}, {-1.0f, 1.0f});
    const Tape::NodeId dy = stencil_conv(t, p, {1, 1, 2, 1}, {-1.0f, 1.0f});
    const Tape::NodeId s = t.add(t.sum(t.square(dx)), t.sum(t.square(dy)));
    acc = acc == Tape::kInvalid ? s : t.add(acc, s);
  }
  return t.mul(acc, scalar_const(t, 1.0f / static_cast<float>(h * w)));
}

// Rectified negative Jacobian determinant of the map, central differences on
// the interior, averaged over the full pixel count.  The boundary rings are
// held near the identity by the taper, so the skipped border contributes
// nothing on the maps this term is applied to.
Tape::NodeId jac_term(Tape& t, Tape::NodeId map_x, Tape::NodeId map_y, int h, int w) {
  const Tape::NodeId gx = t.reshape(map_x, {1, h, w});
  const Tape::NodeId gy = t.reshape(map_y, {1, h, w});
  const std::vector<float> kx = {0.0f, 0.0f, 0.0f, -0.5f, 0.0f, 0.5f, 0.0f, 0.0f, 0.0f};
  const std::vector<float> ky = {0.0f, -0.5f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.5f, 0.0f};
  const Tape::NodeId dxdx = stencil_conv(t, gx, {1, 1, 3, 3}, kx);
  const Tape::NodeId dxdy = stencil_conv(t, gx, {1, 1, 3, 3}, ky);
  const Tape::NodeId dydx = stencil_conv(t, gy, {1, 1, 3, 3}, kx);
  const Tape::NodeId dydy = stencil_conv(t, gy, {1, 1, 3, 3}, ky);
  const Tape::NodeId det = t.sub(t.mul(dxdx, dydy), t.mul(dxdy, dydx));
  const Tape::NodeId folded = t.sum(t.relu(t.mul(det, scalar_const(t, -1.0f))));
  return t.mul(folded, scalar_const(t, 1.0f / static_cast<float>(h * w)));
}

}  // namespace

CanonEnergyNodes build_canon_energy(Tape& tape, const SirenNet& net, const EnergyModel& model,
                                    const EnergyWeights& weights, const Image& x,
                                    float velocity_scale, int squaring_steps, int taper_margin,
                                    const std::vector<Tape::NodeId>* siren_ids) {
  if (x.empty() || x.height < 3 || x.width < 3) {
    throw std::invalid_argument("build_canon_energy: image too small");
  }
  if (squaring_steps < 1) {
    throw std::invalid_argument("build_canon_energy: squaring_steps must be >= 1");
  }
  const int h = x.height;
  const int w = x.width;
  if (model.vae != nullptr && (model.vae->image_size != h || model.vae->image_size != w)) {
    throw std::invalid_argument("build_canon_energy: vae size does not match the image");
  }
  if (model.disc != nullptr && (model.disc->image_size != h || model.disc->image_size != w)) {
    throw std::invalid_argument("build_canon_energy: discriminator size does not match the image");
  }
  if (model.template_image != nullptr && !model.template_image->same_shape(x)) {
    throw std::invalid_argument("build_canon_energy: template shape does not match the image");
  }

  CanonEnergyNodes out;
  out.squaring_steps = squaring_steps;
  if (siren_ids != nullptr) {
    if (siren_ids->size() != net.w.count()) {
      throw std::invalid_argument("build_canon_energy: supplied leaf count does not match");
    }
    out.siren_ids = *siren_ids;
  } else {
    out.siren_ids = insert_weights(tape, net.w, true);
  }
  const SirenVelocityNodes vel =
      build_siren_velocity(tape, net, out.siren_ids, h, w, velocity_scale);
  out.raw_x = vel.raw_x;
  out.raw_y = vel.raw_y;
  // Taper margin is fixed inside build_siren_velocity; re-apply only if a
  // different margin was requested.
  if (taper_margin == 3) {
    out.tapered_x = vel.tapered_x;
    out.tapered_y = vel.tapered_y;
  } else {
    Tensor taper = Tensor::zeros({h, w});
    taper.data = boundary_taper(h, w, taper_margin);
    const Tape::NodeId taper_node = tape.constant(std::move(taper));
    out.tapered_x = tape.mul(vel.raw_x, taper_node);
    out.tapered_y = tape.mul(vel.raw_y, taper_node);
  }

  const DeformationMap id = DeformationMap::identity(h, w);
  Tensor idx = Tensor::zeros({h, w});
  idx.data = id.x;
  Tensor idy = Tensor::zeros({h, w});
  idy.data = id.y;
  const Tape::NodeId frac = scalar_const(tape, 1.0f / static_cast<float>(1 << squaring_steps));
  Tape::NodeId phi_x = tape.add(tape.constant(std::move(idx)), tape.mul(out.tapered_x, frac));
  Tape::NodeId phi_y = tape.add(tape.constant(std::move(idy)), tape.mul(out.tapered_y, frac));
  for (int s = 0; s < squaring_steps; ++s) {
    const Tape::NodeId nx = tape.grid_sample(phi_x, phi_x, phi_y);
    const Tape::NodeId ny = tape.grid_sample(phi_y, phi_x, phi_y);
    phi_x = nx;
    phi_y = ny;
  }
  out.map_x = phi_x;
  out.map_y = phi_y;

  Tensor xt = Tensor::zeros({h, w});
  xt.data = x.data;
  out.x_c = tape.grid_sample(tape.constant(std::move(xt)), phi_x, phi_y);

  Tape::NodeId total = Tape::kInvalid;
  auto accumulate = [&](Tape::NodeId term, float lambda) {
    const Tape::NodeId weighted = tape.mul(term, scalar_const(tape, lambda));
    total = total == Tape::kInvalid ? weighted : tape.add(total, weighted);
  };

  if (model.vae != nullptr) {
    const auto vae_ids = insert_weights(tape, model.vae->w, false);
    const Tape::NodeId x3 = tape.reshape(out.x_c, {1, h, w});
    out.e_vae = build_vae_energy(tape, *model.vae, vae_ids, x3).energy;
    accumulate(out.e_vae, weights.lambda_vae);
  } else if (model.template_image != nullptr) {
    Tensor tt = Tensor::zeros({h, w});
    tt.data = model.template_image->data;
    out.e_vae = tape.mean(tape.square(tape.sub(out.x_c, tape.constant(std::move(tt)))));
    accumulate(out.e_vae, weights.lambda_vae);
  }
  if (model.disc != nullptr) {
    const auto disc_ids = insert_weights(tape, model.disc->w, false);
    const Tape::NodeId x3 = tape.reshape(out.x_c, {1, h, w});
    const Tape::NodeId score = build_disc_score(tape, *model.disc, disc_ids, x3);
    out.e_adv = tape.reshape(tape.mul(score, scalar_const(tape, -1.0f)), {1});
    accumulate(out.e_adv, weights.lambda_adv);
  }
  out.e_grad = grad_term(tape, out.tapered_x, out.tapered_y, h, w);
  accumulate(out.e_grad, weights.lambda_grad);
  out.e_jac = jac_term(tape, out.map_x, out.map_y, h, w);
  accumulate(out.e_jac, weights.lambda_jac);
  out.total = total;
  return out;
}

EnergyBreakdown read_breakdown(const Tape& tape, const CanonEnergyNodes& nodes) {
  EnergyBreakdown b;
  auto pick = [&](Tape::NodeId id) {
    return id == Tape::kInvalid ? 0.0f : tape.value(id).data[0];
  };
  b.e_vae = pick(nodes.e_vae);
  b.e_adv = pick(nodes.e_adv);
  b.e_grad = pick(nodes.e_grad);
  b.e_jac = pick(nodes.e_jac);
  b.total = pick(nodes.total);
  return b;
}

EnergyBreakdown canon_energy(const SirenNet& net, const EnergyModel& model,
                             const EnergyWeights& weights, const Image& x, float velocity_scale,
                             int squaring_steps, int taper_margin) {
  Tape tape;
  const CanonEnergyNodes nodes =
      build_canon_energy(tape, net, model, weights, x, velocity_scale, squaring_steps,
                         taper_margin);
  return read_breakdown(tape, nodes);
}

RegTerms e_reg(const Svf& v, const DeformationMap& g) {
  if (v.height() != g.height || v.width() != g.width) {
    throw std::invalid_argument("e_reg: field and map shapes differ");
  }
  const int h = g.height;
  const int w = g.width;
  if (h < 3 || w < 3) throw std::invalid_argument("e_reg: grid too small");
  const VectorField t = v.tapered();
  auto ix = [w](int i, int j) { return static_cast<std::size_t>(i) * w + j; };
  double grad_acc = 0.0;
  for (const std::vector<float>* plane : {&t.x, &t.y}) {
    const std::vector<float>& p = *plane;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j + 1 < w; ++j) {
        const float d = p[ix(i, j + 1)] - p[ix(i, j)];
        grad_acc += static_cast<double>(d) * d;
      }
    }
    for (int i = 0; i + 1 < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const float d = p[ix(i + 1, j)] - p[ix(i, j)];
        grad_acc += static_cast<double>(d) * d;
      }
    }
  }
  double jac_acc = 0.0;
  for (int i = 1; i + 1 < h; ++i) {
    for (int j = 1; j + 1 < w; ++j) {
      const float dxdx = 0.5f * (g.x[ix(i, j + 1)] - g.x[ix(i, j - 1)]);
      const float dydx = 0.5f * (g.y[ix(i, j + 1)] - g.y[ix(i, j - 1)]);
      const float dxdy = 0.5f * (g.x[ix(i + 1, j)] - g.x[ix(i - 1, j)]);
      const float dydy = 0.5f * (g.y[ix(i + 1, j)] - g.y[ix(i - 1, j)]);
      const float det = dxdx * dydy - dxdy * dydx;
      if (det < 0.0f) jac_acc -= static_cast<double>(det);
    }
  }
  RegTerms out;
  out.e_grad = static_cast<float>(grad_acc / static_cast<double>(h * w));
  out.e_jac = static_cast<float>(jac_acc / static_cast<double>(h * w));
  return out;
}

SimilarityTerms e_similarity(const Image& x_warped, const VaeNet* vae,
                             const Discriminator* disc) {
  SimilarityTerms out;
  if (vae != nullptr) out.e_vae = vae_energy(*vae, x_warped);
  if (disc != nullptr) out.e_adv = adv_energy(*disc, x_warped);
  return out;
}

float e_template(const Image& x_warped, const Image& reference) {
  if (!x_warped.same_shape(reference)) {
    throw std::invalid_argument("e_template: shapes differ");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < x_warped.data.size(); ++k) {
    const double d = static_cast<double>(x_warped.data[k]) - reference.data[k];
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(x_warped.data.size()));
}

EnergyBreakdown xe_energy(const EnergyModel& model, const EnergyWeights& weights,
                          const Image& x) {
  EnergyBreakdown b;
  if (model.vae != nullptr) {
    b.e_vae = vae_energy(*model.vae, x);
  } else if (model.template_image != nullptr) {
    if (!model.template_image->same_shape(x)) {
      throw std::invalid_argument("xe_energy: template shape does not match the image");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      const double d = static_cast<double>(x.data[k]) - model.template_image->data[k];
      acc += d * d;
    }
    b.e_vae = static_cast<float>(acc / static_cast<double>(x.data.size()));
  }
  if (model.disc != nullptr) b.e_adv = adv_energy(*model.disc, x);
  b.total = weights.lambda_vae * b.e_vae + weights.lambda_adv * b.e_adv;
  return b;
}

}  // namespace diffeocan
