#include "pipeline.hpp"

#include <stdexcept>

#include "diffeocan/common.hpp"
#include "diffeocan/image.hpp"

namespace diffeocan::pipeline {

namespace {

// Transforms each sample with its own map and keeps the maps, which the
// invariance and equivariance checks need alongside the warped images.
void transform_with_maps(const std::vector<Sample>& src, const RbfConfig& cfg,
                         std::vector<Sample>& out, std::vector<DeformationMap>& maps) {
  out.clear();
  maps.clear();
  out.reserve(src.size());
  maps.reserve(src.size());
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
    maps.push_back(d.forward);
  }
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData data;
  RbfConfig test_rbf = cfg.data.rbf;
  test_rbf.seed = mix_seed(cfg.seed, kTestWarp);
  if (cfg.data.kind == "squares") {
    data.classification = false;
    data.image_size = cfg.data.squares.image_size;
    SquaresConfig sq = cfg.data.squares;
    sq.seed = mix_seed(cfg.seed, kData);
    const int total = cfg.data.n_train + cfg.data.n_val + cfg.data.n_test;
    DatasetSplit split =
        split_samples(gen_squares(total, sq), cfg.data.n_train, cfg.data.n_val, cfg.data.n_test);
    data.train = std::move(split.train);
    data.val = std::move(split.val);
    data.test_canonical = std::move(split.test);
    transform_with_maps(data.test_canonical, test_rbf, data.test, data.test_maps);
    return data;
  }
  if (cfg.data.kind == "mnist") {
    data.classification = true;
    data.num_classes = 3;
    if (cfg.paths.mnist_train_images.empty() || cfg.paths.mnist_train_labels.empty() ||
        cfg.paths.mnist_test_images.empty() || cfg.paths.mnist_test_labels.empty()) {
      throw ParseError("config: mnist paths are not set (paths.mnist_*)");
    }
    std::vector<Sample> train_all =
        load_mnist_idx(cfg.paths.mnist_train_images, cfg.paths.mnist_train_labels);
    std::vector<Sample> test_all =
        load_mnist_idx(cfg.paths.mnist_test_images, cfg.paths.mnist_test_labels);
    if (static_cast<int>(train_all.size()) < cfg.data.mnist_train) {
      throw ParseError(cfg.paths.mnist_train_images + ": has " +
                       std::to_string(train_all.size()) + " records, config wants " +
                       std::to_string(cfg.data.mnist_train));
    }
    if (static_cast<int>(test_all.size()) < cfg.data.mnist_test) {
      throw ParseError(cfg.paths.mnist_test_images + ": has " +
                       std::to_string(test_all.size()) + " records, config wants " +
                       std::to_string(cfg.data.mnist_test));
    }
    data.image_size = train_all.front().image.height;
    train_all.resize(static_cast<std::size_t>(cfg.data.mnist_train));
    test_all.resize(static_cast<std::size_t>(cfg.data.mnist_test));
    data.train = std::move(train_all);
    data.test_canonical = std::move(test_all);
    transform_with_maps(data.test_canonical, test_rbf, data.test, data.test_maps);
    return data;
  }
  throw ParseError("config: unknown data kind '" + cfg.data.kind + "'");
}

std::vector<Image> images_of(const std::vector<Sample>& samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.image);
  return out;
}

FakeSource warp_fake_source(std::vector<Image> images, const RbfConfig& rbf) {
  if (images.empty()) {
    throw std::invalid_argument("warp_fake_source: empty image list");
  }
  return [images = std::move(images), rbf](std::uint64_t draw_seed) {
    Rng pick(draw_seed);
    const Image& base =
        images[static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(images.size()) - 1))];
    RbfConfig draw_rbf = rbf;
    // An unlucky seed can exhaust the sampler's rejection budget; redraw with
    // a derived seed so one bad draw does not abort a whole training run.
    for (std::uint64_t attempt = 0;; ++attempt) {
      draw_rbf.seed = mix_seed(draw_seed, 0x77617270ULL + attempt);
      try {
        const RbfDiffeo d = sample_rbf_diffeo(draw_rbf, base.height, base.width);
        return warp_image(base, d.forward);
      } catch (const NumericError&) {
        if (attempt >= 7) throw;
      }
    }
  };
}

namespace {

std::vector<InnerSample> inner_samples(const std::vector<Sample>& samples, bool classification) {
  std::vector<InnerSample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    InnerSample is;
    is.image = s.image;
    if (classification) {
      is.label = s.label;
    } else {
      is.mask = s.mask;
    }
    out.push_back(std::move(is));
  }
  return out;
}

}  // namespace

VaeNet train_vae_stage(const RunConfig& cfg, const PreparedData& data,
                       std::vector<float>* losses) {
  VaeNet net = VaeNet::init(data.image_size, cfg.vae.latent, cfg.vae.base_channels,
                            mix_seed(cfg.seed, kVae));
  const TrainConfig tc = stage_train_config(cfg.vae.train, cfg.seed, kVae);
  std::vector<float> l = train_vae(net, images_of(data.train), tc);
  if (losses) *losses = std::move(l);
  return net;
}

Discriminator train_disc_stage(const RunConfig& cfg, const PreparedData& data,
                               std::vector<float>* losses) {
  const std::vector<Image> train_images = images_of(data.train);
  const FakeSource source = warp_fake_source(train_images, cfg.data.rbf);
  Discriminator net =
      Discriminator::init(data.image_size, cfg.disc.base_channels, mix_seed(cfg.seed, kDisc));
  const TrainConfig tc = stage_train_config(cfg.disc.train, cfg.seed, kDisc);
  std::vector<float> l = train_discriminator(net, train_images, source, tc);
  if (losses) *losses = std::move(l);
  return net;
}

InnerModel train_inner_stage(const RunConfig& cfg, const PreparedData& data, bool augmented,
                             std::vector<float>* losses) {
  const Stream stream = augmented ? kAugment : kInner;
  InnerModel net = data.classification
                       ? InnerModel::init_classifier(data.image_size, data.num_classes,
                                                     cfg.inner.base_channels,
                                                     mix_seed(cfg.seed, stream))
                       : InnerModel::init_segmenter(data.image_size, cfg.inner.base_channels,
                                                    mix_seed(cfg.seed, stream));
  std::vector<Sample> set = data.train;
  if (augmented) {
    RbfConfig aug_rbf = cfg.data.rbf;
    aug_rbf.seed = mix_seed(cfg.seed, kAugWarp);
    const std::vector<Sample> warped = make_transformed(data.train, aug_rbf);
    set.insert(set.end(), warped.begin(), warped.end());
  }
  const TrainConfig tc = stage_train_config(cfg.inner.train, cfg.seed, stream);
  std::vector<float> l = train_inner(net, inner_samples(set, data.classification), tc);
  if (losses) *losses = std::move(l);
  return net;
}

std::string model_path(const RunConfig& cfg, const std::string& name) {
  return cfg.paths.out_dir + "/models/" + name + ".dcnw";
}

VaeNet load_vae(const RunConfig& cfg) {
  return VaeNet::from_named(load_checkpoint(model_path(cfg, "vae")));
}

Discriminator load_disc(const RunConfig& cfg) {
  return Discriminator::from_named(load_checkpoint(model_path(cfg, "disc")));
}

InnerModel load_inner(const RunConfig& cfg, const std::string& name) {
  return InnerModel::from_named(load_checkpoint(model_path(cfg, name)));
}

EnergyHolder load_energy(const RunConfig& cfg) {
  EnergyHolder h;
  h.vae = load_vae(cfg);
  h.disc = load_disc(cfg);
  return h;
}

TrainConfig stage_train_config(const TrainConfig& base, std::uint64_t seed, Stream stream) {
  TrainConfig t = base;
  t.seed = mix_seed(seed, stream);
  return t;
}

}  // namespace diffeocan::pipeline
