#include <cstdio>
#include <fstream>
#include <string>

#include <doctest.h>

#include "diffeocan/common.hpp"
#include "diffeocan/run_config.hpp"

using namespace diffeocan;

TEST_CASE("synthetic profile carries the published energy weights") {
  const RunConfig cfg = profile_config("synthetic");
  CHECK(cfg.data.kind == "squares");
  CHECK(cfg.data.squares.image_size == 64);
  CHECK(cfg.data.n_train == 200);
  CHECK(cfg.data.n_test == 100);
  CHECK(cfg.canon.steps == 100);
  CHECK(cfg.canon.weights.lambda_vae == 1e-5f);
  CHECK(cfg.canon.weights.lambda_adv == 0.01f);
  CHECK(cfg.canon.weights.lambda_grad == 1.0f);
  CHECK(cfg.canon.weights.lambda_jac == 10.0f);
}

TEST_CASE("digit profile swaps the reconstruction weight up") {
  const RunConfig cfg = profile_config("mnist");
  CHECK(cfg.data.kind == "mnist");
  CHECK(cfg.data.mnist_train == 1000);
  CHECK(cfg.data.mnist_test == 100);
  CHECK(cfg.canon.steps == 100);
  CHECK(cfg.canon.weights.lambda_vae == 0.01f);
  CHECK(cfg.canon.weights.lambda_adv == 0.01f);
  CHECK(cfg.canon.weights.lambda_grad == 1.0f);
  CHECK(cfg.canon.weights.lambda_jac == 10.0f);
  CHECK(cfg.data.rbf.max_disp < cfg.data.rbf.spacing / 2.0f);
}

TEST_CASE("unknown profiles are rejected by name") {
  CHECK_THROWS_AS(profile_config("cifar"), ParseError);
}

TEST_CASE("fresh configs default to the published canonicalisation settings") {
  const CanonConfig cc;
  CHECK(cc.steps == 100);
  CHECK(cc.lr == 1e-4f);
  CHECK(cc.velocity_scale == 4.0f);
  CHECK(cc.weights.lambda_vae == 1e-5f);
  CHECK(cc.weights.lambda_adv == 0.01f);
  CHECK(cc.weights.lambda_grad == 1.0f);
  CHECK(cc.weights.lambda_jac == 10.0f);
}

TEST_CASE("config parsing merges overrides over the base") {
  const RunConfig base = profile_config("synthetic");
  const RunConfig cfg = parse_run_config(
      R"({"seed": 7, "canon": {"steps": 12, "lr": 0.5}, "data": {"n_train": 13}})", base);
  CHECK(cfg.seed == 7);
  CHECK(cfg.canon.steps == 12);
  CHECK(cfg.canon.lr == 0.5f);
  CHECK(cfg.data.n_train == 13);
  CHECK(cfg.data.n_val == base.data.n_val);
  CHECK(cfg.canon.weights.lambda_jac == base.canon.weights.lambda_jac);
}

TEST_CASE("unknown keys are rejected with their section named") {
  const RunConfig base = profile_config("synthetic");
  try {
    parse_run_config(R"({"canon": {"step_count": 5}})", base);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step_count") != std::string::npos);
    CHECK(msg.find("canon") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config(R"({"nonsense": 1})", base), ParseError);
}

TEST_CASE("badly typed values are rejected with their key named") {
  const RunConfig base = profile_config("synthetic");
  try {
    parse_run_config(R"({"canon": {"steps": "many"}})", base);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("steps") != std::string::npos);
  }
}

TEST_CASE("invalid json is a parse error, not a crash") {
  const RunConfig base = profile_config("synthetic");
  CHECK_THROWS_AS(parse_run_config("{not json", base), ParseError);
}

TEST_CASE("configs survive a serialisation round trip") {
  RunConfig cfg = profile_config("mnist");
  cfg.seed = 99;
  cfg.canon.steps = 17;
  cfg.canon.weights.lambda_grad = 2.5f;
  cfg.data.rbf.max_disp = 2.0f;

  const std::string text = run_config_json(cfg);
  const RunConfig back = parse_run_config(text, profile_config("synthetic"));
  CHECK(back.seed == 99);
  CHECK(back.data.kind == "mnist");
  CHECK(back.canon.steps == 17);
  CHECK(back.canon.weights.lambda_grad == 2.5f);
  CHECK(back.data.rbf.max_disp == 2.0f);
  CHECK(run_config_json(back) == text);
}

TEST_CASE("config files load from disk with the same strictness") {
  const std::string path = "/tmp/diffeocan_cfg_test.json";
  {
    std::ofstream out(path);
    out << R"({"canon": {"steps": 3}})";
  }
  const RunConfig cfg = load_run_config(path, profile_config("synthetic"));
  CHECK(cfg.canon.steps == 3);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_run_config("/tmp/diffeocan_missing_cfg.json", profile_config("synthetic")),
                  ParseError);
}
