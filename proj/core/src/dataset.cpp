#include "diffeocan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "diffeocan/nets.hpp"
#include "diffeocan/svf.hpp"

namespace diffeocan {

void SquaresConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("SquaresConfig: image_size must be >= 16");
  if (outer_min < 4 || outer_min > outer_max) {
    throw std::invalid_argument("SquaresConfig: bad outer side range");
  }
  if (inner_min < 2 || inner_min > inner_max) {
    throw std::invalid_argument("SquaresConfig: bad inner side range");
  }
  if (inner_max > outer_min - 4) {
    throw std::invalid_argument("SquaresConfig: inner square must fit strictly inside the outer");
  }
  if (border_margin < 3) {
    throw std::invalid_argument("SquaresConfig: border margin must cover the taper width");
  }
  if (outer_max + 2 * border_margin > image_size) {
    throw std::invalid_argument("SquaresConfig: outer square cannot fit inside the margin");
  }
  if (noise_sigma < 0.0f) throw std::invalid_argument("SquaresConfig: negative noise sigma");
}

std::vector<Sample> gen_squares(int n, const SquaresConfig& cfg) {
  if (n < 1) throw std::invalid_argument("gen_squares: n must be >= 1");
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  const int size = cfg.image_size;
  for (int id = 0; id < n; ++id) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(id)));
    Sample s;
    s.id = id;
    s.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(id));
    const int outer = rng.uniform_int(cfg.outer_min, cfg.outer_max);
    const int inner = rng.uniform_int(cfg.inner_min, std::min(cfg.inner_max, outer - 4));
    const int oy = rng.uniform_int(cfg.border_margin, size - cfg.border_margin - outer);
    const int ox = rng.uniform_int(cfg.border_margin, size - cfg.border_margin - outer);
    const int iy = rng.uniform_int(oy + 1, oy + outer - inner - 1);
    const int ix = rng.uniform_int(ox + 1, ox + outer - inner - 1);
    // Disjoint intensity bands keep both edges visible under the noise.
    const float bg = rng.uniform(0.05f, 0.25f);
    const float fg_outer = rng.uniform(0.40f, 0.60f);
    const float fg_inner = rng.uniform(0.75f, 0.95f);
    s.image = Image(size, size, bg);
    s.mask = Mask(size, size, 0);
    for (int i = oy; i < oy + outer; ++i) {
      for (int j = ox; j < ox + outer; ++j) s.image.at(i, j) = fg_outer;
    }
    for (int i = iy; i < iy + inner; ++i) {
      for (int j = ix; j < ix + inner; ++j) {
        s.image.at(i, j) = fg_inner;
        s.mask.at(i, j) = 1;
      }
    }
    if (cfg.noise_sigma > 0.0f) {
      for (float& v : s.image.data) {
        v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0f, 1.0f);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit split_samples(std::vector<Sample> samples, int n_train, int n_val, int n_test) {
  if (n_train < 0 || n_val < 0 || n_test < 0 ||
      static_cast<std::size_t>(n_train) + n_val + n_test != samples.size()) {
    throw std::invalid_argument("split_samples: counts do not sum to the sample count");
  }
  DatasetSplit split;
  auto it = samples.begin();
  split.train.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_train));
  it += n_train;
  split.val.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_val));
  it += n_val;
  split.test.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_test));
  return split;
}

void RbfConfig::validate() const {
  if (!(spacing > 0.0f)) throw std::invalid_argument("RbfConfig: spacing must be positive");
  if (!(bandwidth > 0.0f)) throw std::invalid_argument("RbfConfig: bandwidth must be positive");
  if (max_disp < 0.0f) throw std::invalid_argument("RbfConfig: negative max displacement");
  if (!(max_disp < spacing / 2.0f)) {
    throw std::invalid_argument("RbfConfig: max displacement must stay below spacing / 2");
  }
  if (!(min_jacobian > 0.0f)) throw std::invalid_argument("RbfConfig: min_jacobian must be positive");
  if (max_attempts < 1) throw std::invalid_argument("RbfConfig: max_attempts must be >= 1");
  if (inverse_iters < 1) throw std::invalid_argument("RbfConfig: inverse_iters must be >= 1");
  if (taper_margin < 1) throw std::invalid_argument("RbfConfig: taper_margin must be >= 1");
}

namespace {

// Tapered displacement field from one weight draw.
VectorField rbf_displacement(Rng& rng, const RbfConfig& cfg, int h, int w) {
  std::vector<float> cys, cxs;
  for (float c = cfg.spacing / 2.0f; c < static_cast<float>(h); c += cfg.spacing) cys.push_back(c);
  for (float c = cfg.spacing / 2.0f; c < static_cast<float>(w); c += cfg.spacing) cxs.push_back(c);
  struct Bump {
    float cy, cx, wx, wy;
  };
  std::vector<Bump> bumps;
  bumps.reserve(cys.size() * cxs.size());
  for (float cy : cys) {
    for (float cx : cxs) {
      Bump b{cy, cx, rng.uniform(-cfg.max_disp, cfg.max_disp),
             rng.uniform(-cfg.max_disp, cfg.max_disp)};
      bumps.push_back(b);
    }
  }
  const float inv_two_b2 = 1.0f / (2.0f * cfg.bandwidth * cfg.bandwidth);
  const std::vector<float> taper = boundary_taper(h, w, cfg.taper_margin);
  VectorField u(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      float ux = 0.0f, uy = 0.0f;
      for (const Bump& b : bumps) {
        const float dy = static_cast<float>(i) - b.cy;
        const float dx = static_cast<float>(j) - b.cx;
        const float k = std::exp(-(dx * dx + dy * dy) * inv_two_b2);
        ux += b.wx * k;
        uy += b.wy * k;
      }
      const std::size_t p = static_cast<std::size_t>(i) * w + j;
      u.x[p] = ux * taper[p];
      u.y[p] = uy * taper[p];
    }
  }
  return u;
}

float min_jacobian_det(const DeformationMap& g) {
  const JacobianField jf = jacobian_determinant(g);
  float m = jf.det[0];
  for (float d : jf.det) m = std::min(m, d);
  return m;
}

}  // namespace

RbfDiffeo sample_rbf_diffeo(Rng& rng, const RbfConfig& cfg, int h, int w) {
  cfg.validate();
  if (h < 3 || w < 3) throw std::invalid_argument("sample_rbf_diffeo: grid too small");
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    const VectorField u = rbf_displacement(rng, cfg, h, w);
    DeformationMap fwd = DeformationMap::identity(h, w);
    for (std::size_t k = 0; k < fwd.size(); ++k) {
      fwd.x[k] += u.x[k];
      fwd.y[k] += u.y[k];
    }
    if (min_jacobian_det(fwd) < cfg.min_jacobian) continue;
    // Fixed point of q = p - u(q); converges because the displacement is a
    // contraction at these magnitudes.
    DeformationMap inv = DeformationMap::identity(h, w);
    for (int it = 0; it < cfg.inverse_iters; ++it) {
      DeformationMap next(h, w);
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * w + j;
          const float qx = inv.x[k];
          const float qy = inv.y[k];
          next.x[k] = static_cast<float>(j) -
                      detail::bilinear_fetch(u.x.data(), h, w, qx, qy);
          next.y[k] = static_cast<float>(i) -
                      detail::bilinear_fetch(u.y.data(), h, w, qx, qy);
        }
      }
      inv = std::move(next);
    }
    RbfDiffeo out;
    out.forward = std::move(fwd);
    out.inverse = std::move(inv);
    out.attempts = attempt;
    return out;
  }
  throw NumericError("sample_rbf_diffeo: rejection budget exhausted (" +
                     std::to_string(cfg.max_attempts) + " attempts)");
}

RbfDiffeo sample_rbf_diffeo(const RbfConfig& cfg, int h, int w) {
  Rng rng(cfg.seed);
  return sample_rbf_diffeo(rng, cfg, h, w);
}

std::vector<Sample> make_transformed(const std::vector<Sample>& src, const RbfConfig& cfg) {
  if (src.empty()) throw std::invalid_argument("make_transformed: empty source list");
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(src.size());
  for (const Sample& s : src) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(s.id)));
    const RbfDiffeo d = sample_rbf_diffeo(rng, cfg, s.image.height, s.image.width);
    Sample t;
    t.id = s.id;
    t.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(s.id));
    t.image = warp_image(s.image, d.forward);
    if (!s.mask.empty()) t.mask = warp_mask(s.mask, d.forward);
    t.label = s.label;
    t.digit = s.digit;
    t.provenance = "transformed";
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated IDX header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

std::vector<Sample> load_mnist_idx(const std::string& images_path,
                                   const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw ParseError(images_path + ": cannot open");
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw ParseError(labels_path + ": cannot open");

  const std::uint32_t img_magic = read_be_u32(imgs, images_path);
  if (img_magic != 0x00000803u) {
    throw ParseError(images_path + ": bad IDX magic, expected 0x00000803, found " +
                     std::to_string(img_magic));
  }
  const std::uint32_t lab_magic = read_be_u32(labs, labels_path);
  if (lab_magic != 0x00000801u) {
    throw ParseError(labels_path + ": bad IDX magic, expected 0x00000801, found " +
                     std::to_string(lab_magic));
  }
  const std::uint32_t n_img = read_be_u32(imgs, images_path);
  const std::uint32_t h = read_be_u32(imgs, images_path);
  const std::uint32_t w = read_be_u32(imgs, images_path);
  const std::uint32_t n_lab = read_be_u32(labs, labels_path);
  if (n_img != n_lab) {
    throw ParseError(images_path + ": image count " + std::to_string(n_img) +
                     " does not match label count " + std::to_string(n_lab));
  }
  if (h == 0 || w == 0 || h > 4096 || w > 4096) {
    throw ParseError(images_path + ": implausible image dimensions");
  }
  std::vector<Sample> out;
  out.reserve(n_img);
  std::vector<unsigned char> row(static_cast<std::size_t>(h) * w);
  for (std::uint32_t n = 0; n < n_img; ++n) {
    imgs.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!imgs) throw ParseError(images_path + ": truncated pixel data at record " +
                                std::to_string(n));
    char lab = 0;
    labs.read(&lab, 1);
    if (!labs) throw ParseError(labels_path + ": truncated label data at record " +
                                std::to_string(n));
    Sample s;
    s.id = static_cast<int>(n);
    s.image = Image(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t k = 0; k < row.size(); ++k) {
      s.image.data[k] = static_cast<float>(row[k]) / 255.0f;
    }
    s.digit = static_cast<int>(static_cast<unsigned char>(lab));
    s.label = std::min(genus_oracle(threshold_mask(s.image, 0.5f)), 2);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace diffeocan
