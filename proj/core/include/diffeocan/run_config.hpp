#pragma once

#include <cstdint>
#include <string>

#include "diffeocan/canon.hpp"
#include "diffeocan/dataset.hpp"
#include "diffeocan/nets.hpp"

namespace diffeocan {

struct DataConfig {
  std::string kind = "squares";  // "squares" or "mnist"
  SquaresConfig squares;
  RbfConfig rbf;
  int n_train = 200;
  int n_val = 50;
  int n_test = 100;
  int mnist_train = 1000;
  int mnist_test = 100;
};

struct VaeSection {
  TrainConfig train;
  int latent = 10;
  int base_channels = 16;
};

struct DiscSection {
  TrainConfig train;
  int base_channels = 16;
};

struct InnerSection {
  TrainConfig train;
  int base_channels = 16;
};

struct PathsConfig {
  std::string out_dir = "out";
  std::string mnist_train_images;
  std::string mnist_train_labels;
  std::string mnist_test_images;
  std::string mnist_test_labels;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  VaeSection vae;
  DiscSection disc;
  InnerSection inner;
  CanonConfig canon;
  int jobs = 1;
  PathsConfig paths;
};

// Built-in defaults: "synthetic" (nested squares at 64x64) or "mnist"
// (28x28 digits relabelled by hole count).
RunConfig profile_config(const std::string& name);

// Strict parse: every key must be known, every value well typed.  Values
// merge over `base`, so a config file may override any subset.
RunConfig parse_run_config(const std::string& json_text, RunConfig base);

RunConfig load_run_config(const std::string& path, const RunConfig& base);

std::string run_config_json(const RunConfig& cfg);

}  // namespace diffeocan
