#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>

namespace {

const char* cli_path() { return DIFFEOCAN_CLI_PATH; }

struct RunOutcome {
  int exit_code = -1;
  std::string output;
};

RunOutcome run_cli(const std::string& args) {
  const std::string out_file = "/tmp/diffeocan_cli_out.txt";
  const std::string cmd = std::string(cli_path()) + " " + args + " > " + out_file + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunOutcome r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  std::remove(out_file.c_str());
  return r;
}

std::string scratch_dir(const std::string& stem) {
  const std::string dir = "/tmp/diffeocan_cli_" + stem;
  std::system(("rm -rf " + dir).c_str());
  return dir;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small end-to-end profile: tiny grids and tiny nets keep each stage under a
// second while still exercising every code path.
std::string smoke_config(const std::string& out_dir) {
  const std::string path = out_dir + "_cfg.json";
  std::ofstream out(path);
  out << R"({
  "seed": 11,
  "data": {"n_train": 8, "n_val": 4, "n_test": 4,
           "image_size": 32, "outer_min": 16, "outer_max": 24,
           "inner_min": 6, "inner_max": 10,
           "rbf": {"spacing": 8.0, "bandwidth": 4.0, "max_disp": 2.0, "taper_margin": 4}},
  "train_vae": {"epochs": 1, "batch": 4, "base_channels": 4, "latent": 4},
  "train_disc": {"epochs": 1, "batch": 4, "base_channels": 4},
  "train_inner": {"epochs": 1, "batch": 4, "base_channels": 4},
  "canon": {"steps": 2, "siren_hidden": 8, "siren_layers": 2},
  "paths": {"out_dir": ")" << out_dir
      << R"("}
})";
  return path;
}

}  // namespace

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("canonicalise --help").exit_code == 0);
}

TEST_CASE("a missing subcommand is a usage error") {
  CHECK(run_cli("").exit_code == 1);
}

TEST_CASE("unknown flags are usage errors") {
  CHECK(run_cli("gen-data --frobnicate").exit_code == 1);
}

TEST_CASE("a bad config file maps to the data error code") {
  const std::string path = "/tmp/diffeocan_bad_cfg.json";
  {
    std::ofstream out(path);
    out << "{definitely not json";
  }
  const RunOutcome r = run_cli("gen-data --config " + path);
  CHECK(r.exit_code == 2);
  std::remove(path.c_str());
}

TEST_CASE("unknown config keys are rejected with the data error code") {
  const std::string path = "/tmp/diffeocan_unknown_cfg.json";
  {
    std::ofstream out(path);
    out << R"({"canonical_steps": 5})";
  }
  const RunOutcome r = run_cli("gen-data --config " + path);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("canonical_steps") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("a missing checkpoint names the offending path") {
  const std::string dir = scratch_dir("nockpt");
  const RunOutcome r = run_cli("bench --out " + dir);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find(dir + "/models/") != std::string::npos);
}

TEST_CASE("gradient checks run clean from the command line") {
  const RunOutcome r = run_cli("gradcheck --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("grid_sample") != std::string::npos);
  CHECK(r.output.find("conv2d") != std::string::npos);
}

TEST_CASE("the full pipeline runs end to end on a tiny profile") {
  const std::string dir = scratch_dir("smoke");
  const std::string cfg = smoke_config(dir);

  CHECK(run_cli("gen-data --config " + cfg).exit_code == 0);
  CHECK(read_file(dir + "/data/manifest.jsonl").find("\"split\":\"train\"") != std::string::npos);

  CHECK(run_cli("train-vae --config " + cfg).exit_code == 0);
  CHECK(run_cli("train-disc --config " + cfg).exit_code == 0);
  CHECK(run_cli("train-inner --variant both --config " + cfg).exit_code == 0);

  const RunOutcome bench = run_cli("bench --config " + cfg);
  CHECK(bench.exit_code == 0);
  CHECK(read_file(dir + "/bench/per_sample.csv").rfind("id,model,", 0) == 0);

  const RunOutcome inv = run_cli("invariance-check --pairs 2 --config " + cfg);
  CHECK(inv.exit_code == 0);
  CHECK(read_file(dir + "/invariance/pairs.csv").rfind("id,pre_gap,", 0) == 0);

  std::system(("rm -rf " + dir + " " + cfg).c_str());
}

TEST_CASE("zero canonicalisation steps return the input image unchanged") {
  const std::string dir = scratch_dir("steps0");
  const std::string cfg = smoke_config(dir);

  REQUIRE(run_cli("gen-data --config " + cfg).exit_code == 0);
  REQUIRE(run_cli("train-vae --config " + cfg).exit_code == 0);
  REQUIRE(run_cli("train-disc --config " + cfg).exit_code == 0);

  const std::string input = dir + "/data/test/0012_t_img.pgm";
  const RunOutcome r = run_cli("canonicalise --steps 0 --config " + cfg + " --input " + input);
  CHECK(r.exit_code == 0);
  CHECK(read_file(dir + "/canon/x_c.pgm") == read_file(input));

  std::system(("rm -rf " + dir + " " + cfg).c_str());
}

TEST_CASE("dataset generation is reproducible byte for byte") {
  const std::string dir_a = scratch_dir("repro_a");
  const std::string dir_b = scratch_dir("repro_b");
  const std::string cfg_a = smoke_config(dir_a);
  const std::string cfg_b = smoke_config(dir_b);

  REQUIRE(run_cli("gen-data --config " + cfg_a).exit_code == 0);
  REQUIRE(run_cli("gen-data --config " + cfg_b).exit_code == 0);

  CHECK(read_file(dir_a + "/data/train/0000_img.pgm") ==
        read_file(dir_b + "/data/train/0000_img.pgm"));
  CHECK(read_file(dir_a + "/data/test/0012_t_img.pgm") ==
        read_file(dir_b + "/data/test/0012_t_img.pgm"));

  std::system(("rm -rf " + dir_a + " " + dir_b + " " + cfg_a + " " + cfg_b).c_str());
}

TEST_CASE("the seed environment variable fills in when no flag is given") {
  const std::string dir_a = scratch_dir("env_a");
  const std::string dir_b = scratch_dir("env_b");

  const std::string base = std::string(cli_path());
  const std::string cmd_env = "DIFFEOCAN_SEED=21 " + base + " gen-data --profile synthetic" +
                              " --out " + dir_a + " > /dev/null 2>&1";
  const std::string cmd_flag = base + " gen-data --profile synthetic --seed 21 --out " + dir_b +
                               " > /dev/null 2>&1";
  REQUIRE(std::system(cmd_env.c_str()) == 0);
  REQUIRE(std::system(cmd_flag.c_str()) == 0);
  CHECK(read_file(dir_a + "/data/train/0000_img.pgm") ==
        read_file(dir_b + "/data/train/0000_img.pgm"));
  std::system(("rm -rf " + dir_a + " " + dir_b).c_str());
}

TEST_CASE("a bad seed environment value is a usage error") {
  const std::string cmd = std::string("DIFFEOCAN_SEED=banana ") + cli_path() +
                          " gen-data --profile synthetic --out /tmp/diffeocan_cli_badseed" +
                          " > /dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(raw) == 1);
  std::system("rm -rf /tmp/diffeocan_cli_badseed");
}
