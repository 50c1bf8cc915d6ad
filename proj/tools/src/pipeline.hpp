#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffeocan/dataset.hpp"
#include "diffeocan/energy.hpp"
#include "diffeocan/nets.hpp"
#include "diffeocan/run_config.hpp"

namespace diffeocan::pipeline {

// Seed streams: every pipeline stage derives its own RNG stream from the
// global seed, so stages stay deterministic and independent of each other.
enum Stream : std::uint64_t {
  kData = 1,
  kTestWarp = 2,
  kVae = 3,
  kDisc = 4,
  kDiscFake = 5,
  kInner = 6,
  kAugment = 7,
  kAugWarp = 8,
  kPairs = 9,
};

// Everything the training and evaluation stages consume, regenerated
// deterministically from the config on each invocation.
struct PreparedData {
  bool classification = false;
  int image_size = 0;
  int num_classes = 1;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test_canonical;
  std::vector<Sample> test;                 // transformed partners, same ids
  std::vector<DeformationMap> test_maps;    // forward maps used on the test set
};

PreparedData prepare_data(const RunConfig& cfg);

std::vector<Image> images_of(const std::vector<Sample>& samples);

// Discriminator negatives: each draw picks a random base image and applies a
// freshly sampled smooth warp, both derived from the per-draw seed.  The
// returned callable keeps a copy of the image list.
FakeSource warp_fake_source(std::vector<Image> images, const RbfConfig& rbf);

// Full training stages as the command line runs them; the acceptance harness
// calls the same functions so its numbers match the tools exactly.
VaeNet train_vae_stage(const RunConfig& cfg, const PreparedData& data,
                       std::vector<float>* losses = nullptr);
Discriminator train_disc_stage(const RunConfig& cfg, const PreparedData& data,
                               std::vector<float>* losses = nullptr);
// augmented = false trains on the train split alone; true doubles the split
// with freshly warped copies first.
InnerModel train_inner_stage(const RunConfig& cfg, const PreparedData& data, bool augmented,
                             std::vector<float>* losses = nullptr);

// Checkpoint locations under the configured output directory.
std::string model_path(const RunConfig& cfg, const std::string& name);

VaeNet load_vae(const RunConfig& cfg);
Discriminator load_disc(const RunConfig& cfg);
InnerModel load_inner(const RunConfig& cfg, const std::string& name);

// Energy backends from checkpoints; the holder owns the nets and hands out
// views bound to its own storage.
struct EnergyHolder {
  VaeNet vae;
  Discriminator disc;

  EnergyModel model() const {
    EnergyModel m;
    m.vae = &vae;
    m.disc = &disc;
    return m;
  }
};
EnergyHolder load_energy(const RunConfig& cfg);

TrainConfig stage_train_config(const TrainConfig& base, std::uint64_t seed, Stream stream);

}  // namespace diffeocan::pipeline
