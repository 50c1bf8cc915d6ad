#include "diffeocan/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "diffeocan/common.hpp"

namespace diffeocan {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ParseError("config: unknown key '" + key + "' in section '" + where + "'");
    }
  }
}

const json& section(const json& j, const char* key) {
  const json& s = j.at(key);
  if (!s.is_object()) {
    throw ParseError("config: section '" + std::string(key) + "' must be an object");
  }
  return s;
}

template <typename T>
void fetch(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ParseError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace

RunConfig profile_config(const std::string& name) {
  RunConfig cfg;
  if (name == "synthetic") {
    cfg.data.kind = "squares";
    cfg.data.squares.image_size = 64;
    cfg.data.n_train = 200;
    cfg.data.n_val = 50;
    cfg.data.n_test = 100;
    cfg.vae.train.epochs = 30;
    cfg.vae.train.batch = 16;
    cfg.vae.train.lr = 1e-3f;
    cfg.disc.train.epochs = 40;
    cfg.disc.train.batch = 16;
    cfg.disc.train.lr = 1e-3f;
    cfg.inner.train.epochs = 20;
    cfg.inner.train.batch = 8;
    cfg.inner.train.lr = 1e-3f;
    cfg.canon.steps = 100;
    cfg.canon.lr = 3e-3f;
    cfg.canon.siren_hidden = 64;
    cfg.canon.weights.lambda_vae = 1e-5f;
    cfg.canon.weights.lambda_adv = 0.01f;
    cfg.canon.weights.lambda_grad = 1.0f;
    cfg.canon.weights.lambda_jac = 10.0f;
    return cfg;
  }
  if (name == "mnist") {
    cfg.data.kind = "mnist";
    cfg.data.mnist_train = 1000;
    cfg.data.mnist_test = 100;
    cfg.data.rbf.spacing = 8.0f;
    cfg.data.rbf.bandwidth = 4.0f;
    cfg.data.rbf.max_disp = 3.0f;
    cfg.data.rbf.taper_margin = 4;
    cfg.paths.mnist_train_images = "data/mnist/train-images-idx3-ubyte";
    cfg.paths.mnist_train_labels = "data/mnist/train-labels-idx1-ubyte";
    cfg.paths.mnist_test_images = "data/mnist/t10k-images-idx3-ubyte";
    cfg.paths.mnist_test_labels = "data/mnist/t10k-labels-idx1-ubyte";
    cfg.vae.train.epochs = 30;
    cfg.vae.train.batch = 16;
    cfg.vae.train.lr = 1e-3f;
    cfg.disc.train.epochs = 40;
    cfg.disc.train.batch = 16;
    cfg.disc.train.lr = 1e-3f;
    cfg.inner.train.epochs = 10;
    cfg.inner.train.batch = 16;
    cfg.inner.train.lr = 1e-3f;
    cfg.canon.steps = 100;
    cfg.canon.lr = 3e-3f;
    cfg.canon.siren_hidden = 64;
    cfg.canon.weights.lambda_vae = 0.01f;
    cfg.canon.weights.lambda_adv = 0.01f;
    cfg.canon.weights.lambda_grad = 1.0f;
    cfg.canon.weights.lambda_jac = 10.0f;
    return cfg;
  }
  throw ParseError("profile_config: unknown profile '" + name +
                   "' (available: synthetic, mnist)");
}

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw ParseError("config: not valid JSON");
  if (!root.is_object()) throw ParseError("config: top level must be an object");
  check_keys(root, "(top)",
             {"seed", "data", "train_vae", "train_disc", "train_inner", "canon", "bench",
              "paths"});
  fetch(root, "seed", "(top)", base.seed);

  if (root.contains("data")) {
    const json& d = section(root, "data");
    check_keys(d, "data",
               {"kind", "image_size", "n_train", "n_val", "n_test", "noise_sigma", "outer_min",
                "outer_max", "inner_min", "inner_max", "border_margin", "mnist_train",
                "mnist_test", "rbf"});
    fetch(d, "kind", "data", base.data.kind);
    if (base.data.kind != "squares" && base.data.kind != "mnist") {
      throw ParseError("config: data.kind must be 'squares' or 'mnist'");
    }
    fetch(d, "image_size", "data", base.data.squares.image_size);
    fetch(d, "n_train", "data", base.data.n_train);
    fetch(d, "n_val", "data", base.data.n_val);
    fetch(d, "n_test", "data", base.data.n_test);
    fetch(d, "noise_sigma", "data", base.data.squares.noise_sigma);
    fetch(d, "outer_min", "data", base.data.squares.outer_min);
    fetch(d, "outer_max", "data", base.data.squares.outer_max);
    fetch(d, "inner_min", "data", base.data.squares.inner_min);
    fetch(d, "inner_max", "data", base.data.squares.inner_max);
    fetch(d, "border_margin", "data", base.data.squares.border_margin);
    fetch(d, "mnist_train", "data", base.data.mnist_train);
    fetch(d, "mnist_test", "data", base.data.mnist_test);
    if (d.contains("rbf")) {
      const json& r = section(d, "rbf");
      check_keys(r, "data.rbf",
                 {"spacing", "bandwidth", "max_disp", "min_jacobian", "max_attempts",
                  "inverse_iters", "taper_margin"});
      fetch(r, "spacing", "data.rbf", base.data.rbf.spacing);
      fetch(r, "bandwidth", "data.rbf", base.data.rbf.bandwidth);
      fetch(r, "max_disp", "data.rbf", base.data.rbf.max_disp);
      fetch(r, "min_jacobian", "data.rbf", base.data.rbf.min_jacobian);
      fetch(r, "max_attempts", "data.rbf", base.data.rbf.max_attempts);
      fetch(r, "inverse_iters", "data.rbf", base.data.rbf.inverse_iters);
      fetch(r, "taper_margin", "data.rbf", base.data.rbf.taper_margin);
    }
  }

  if (root.contains("train_vae")) {
    const json& v = section(root, "train_vae");
    check_keys(v, "train_vae", {"epochs", "batch", "lr", "latent", "base_channels"});
    fetch(v, "epochs", "train_vae", base.vae.train.epochs);
    fetch(v, "batch", "train_vae", base.vae.train.batch);
    fetch(v, "lr", "train_vae", base.vae.train.lr);
    fetch(v, "latent", "train_vae", base.vae.latent);
    fetch(v, "base_channels", "train_vae", base.vae.base_channels);
  }
  if (root.contains("train_disc")) {
    const json& v = section(root, "train_disc");
    check_keys(v, "train_disc", {"epochs", "batch", "lr", "grad_penalty", "base_channels"});
    fetch(v, "epochs", "train_disc", base.disc.train.epochs);
    fetch(v, "batch", "train_disc", base.disc.train.batch);
    fetch(v, "lr", "train_disc", base.disc.train.lr);
    fetch(v, "grad_penalty", "train_disc", base.disc.train.grad_penalty);
    fetch(v, "base_channels", "train_disc", base.disc.base_channels);
  }
  if (root.contains("train_inner")) {
    const json& v = section(root, "train_inner");
    check_keys(v, "train_inner", {"epochs", "batch", "lr", "base_channels"});
    fetch(v, "epochs", "train_inner", base.inner.train.epochs);
    fetch(v, "batch", "train_inner", base.inner.train.batch);
    fetch(v, "lr", "train_inner", base.inner.train.lr);
    fetch(v, "base_channels", "train_inner", base.inner.base_channels);
  }

  if (root.contains("canon")) {
    const json& c = section(root, "canon");
    check_keys(c, "canon",
               {"steps", "lr", "velocity_scale", "squaring_cap", "taper_margin", "siren_hidden",
                "siren_layers", "siren_omega0", "weights"});
    fetch(c, "steps", "canon", base.canon.steps);
    fetch(c, "lr", "canon", base.canon.lr);
    fetch(c, "velocity_scale", "canon", base.canon.velocity_scale);
    fetch(c, "squaring_cap", "canon", base.canon.squaring_cap);
    fetch(c, "taper_margin", "canon", base.canon.taper_margin);
    fetch(c, "siren_hidden", "canon", base.canon.siren_hidden);
    fetch(c, "siren_layers", "canon", base.canon.siren_layers);
    fetch(c, "siren_omega0", "canon", base.canon.siren_omega0);
    if (c.contains("weights")) {
      const json& w = section(c, "weights");
      check_keys(w, "canon.weights", {"lambda_vae", "lambda_adv", "lambda_grad", "lambda_jac"});
      fetch(w, "lambda_vae", "canon.weights", base.canon.weights.lambda_vae);
      fetch(w, "lambda_adv", "canon.weights", base.canon.weights.lambda_adv);
      fetch(w, "lambda_grad", "canon.weights", base.canon.weights.lambda_grad);
      fetch(w, "lambda_jac", "canon.weights", base.canon.weights.lambda_jac);
    }
  }

  if (root.contains("bench")) {
    const json& b = section(root, "bench");
    check_keys(b, "bench", {"jobs"});
    fetch(b, "jobs", "bench", base.jobs);
    if (base.jobs < 1) throw ParseError("config: bench.jobs must be >= 1");
  }

  if (root.contains("paths")) {
    const json& p = section(root, "paths");
    check_keys(p, "paths",
               {"out_dir", "mnist_train_images", "mnist_train_labels", "mnist_test_images",
                "mnist_test_labels"});
    fetch(p, "out_dir", "paths", base.paths.out_dir);
    fetch(p, "mnist_train_images", "paths", base.paths.mnist_train_images);
    fetch(p, "mnist_train_labels", "paths", base.paths.mnist_train_labels);
    fetch(p, "mnist_test_images", "paths", base.paths.mnist_test_images);
    fetch(p, "mnist_test_labels", "paths", base.paths.mnist_test_labels);
  }
  return base;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open config");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), base);
}

std::string run_config_json(const RunConfig& cfg) {
  json root;
  root["seed"] = cfg.seed;
  json& d = root["data"];
  d["kind"] = cfg.data.kind;
  d["image_size"] = cfg.data.squares.image_size;
  d["n_train"] = cfg.data.n_train;
  d["n_val"] = cfg.data.n_val;
  d["n_test"] = cfg.data.n_test;
  d["noise_sigma"] = cfg.data.squares.noise_sigma;
  d["outer_min"] = cfg.data.squares.outer_min;
  d["outer_max"] = cfg.data.squares.outer_max;
  d["inner_min"] = cfg.data.squares.inner_min;
  d["inner_max"] = cfg.data.squares.inner_max;
  d["border_margin"] = cfg.data.squares.border_margin;
  d["mnist_train"] = cfg.data.mnist_train;
  d["mnist_test"] = cfg.data.mnist_test;
  json& r = d["rbf"];
  r["spacing"] = cfg.data.rbf.spacing;
  r["bandwidth"] = cfg.data.rbf.bandwidth;
  r["max_disp"] = cfg.data.rbf.max_disp;
  r["min_jacobian"] = cfg.data.rbf.min_jacobian;
  r["max_attempts"] = cfg.data.rbf.max_attempts;
  r["inverse_iters"] = cfg.data.rbf.inverse_iters;
  r["taper_margin"] = cfg.data.rbf.taper_margin;
  json& tv = root["train_vae"];
  tv["epochs"] = cfg.vae.train.epochs;
  tv["batch"] = cfg.vae.train.batch;
  tv["lr"] = cfg.vae.train.lr;
  tv["latent"] = cfg.vae.latent;
  tv["base_channels"] = cfg.vae.base_channels;
  json& td = root["train_disc"];
  td["epochs"] = cfg.disc.train.epochs;
  td["batch"] = cfg.disc.train.batch;
  td["lr"] = cfg.disc.train.lr;
  td["grad_penalty"] = cfg.disc.train.grad_penalty;
  td["base_channels"] = cfg.disc.base_channels;
  json& ti = root["train_inner"];
  ti["epochs"] = cfg.inner.train.epochs;
  ti["batch"] = cfg.inner.train.batch;
  ti["lr"] = cfg.inner.train.lr;
  ti["base_channels"] = cfg.inner.base_channels;
  json& c = root["canon"];
  c["steps"] = cfg.canon.steps;
  c["lr"] = cfg.canon.lr;
  c["velocity_scale"] = cfg.canon.velocity_scale;
  c["squaring_cap"] = cfg.canon.squaring_cap;
  c["taper_margin"] = cfg.canon.taper_margin;
  c["siren_hidden"] = cfg.canon.siren_hidden;
  c["siren_layers"] = cfg.canon.siren_layers;
  c["siren_omega0"] = cfg.canon.siren_omega0;
  json& w = c["weights"];
  w["lambda_vae"] = cfg.canon.weights.lambda_vae;
  w["lambda_adv"] = cfg.canon.weights.lambda_adv;
  w["lambda_grad"] = cfg.canon.weights.lambda_grad;
  w["lambda_jac"] = cfg.canon.weights.lambda_jac;
  root["bench"]["jobs"] = cfg.jobs;
  json& p = root["paths"];
  p["out_dir"] = cfg.paths.out_dir;
  p["mnist_train_images"] = cfg.paths.mnist_train_images;
  p["mnist_train_labels"] = cfg.paths.mnist_train_labels;
  p["mnist_test_images"] = cfg.paths.mnist_test_images;
  p["mnist_test_labels"] = cfg.paths.mnist_test_labels;
  return root.dump(2) + "\n";
}

}  // namespace diffeocan
