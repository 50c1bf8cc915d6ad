#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "artifacts.hpp"
#include "diffeocan/canon.hpp"
#include "diffeocan/common.hpp"
#include "diffeocan/dataset.hpp"
#include "diffeocan/energy.hpp"
#include "diffeocan/image_io.hpp"
#include "diffeocan/metrics.hpp"
#include "diffeocan/nets.hpp"
#include "diffeocan/run_config.hpp"
#include "diffeocan/svf.hpp"
#include "diffeocan/tape.hpp"
#include "pipeline.hpp"

namespace {

using namespace diffeocan;
namespace pl = diffeocan::pipeline;
namespace art = diffeocan::artifacts;

struct CommonArgs {
  std::string profile = "synthetic";
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 0;
  int steps = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--profile", args.profile, "Built-in config profile (synthetic, mnist)");
  cmd->add_option("--config", args.config_path, "JSON config merged over the profile");
  cmd->add_option("--seed", args.seed, "Global seed override")
      ->each([&args](const std::string&) { args.seed_given = true; });
  cmd->add_option("--out", args.out_dir, "Output directory override");
  cmd->add_option("--jobs", args.jobs, "Worker cap for per-sample parallel stages");
  cmd->add_option("--steps", args.steps, "Canonicalisation step count override");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = profile_config(args.profile);
  if (const char* env = std::getenv("DIFFEOCAN_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ParseError("DIFFEOCAN_SEED: not an unsigned integer");
    }
  }
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path, cfg);
  if (args.seed_given) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.paths.out_dir = args.out_dir;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  if (args.steps >= 0) cfg.canon.steps = args.steps;
  return cfg;
}

std::string sample_stem(const std::string& dir, const Sample& s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", s.id);
  return dir + "/" + buf;
}

nlohmann::json manifest_record(const Sample& s, const std::string& split,
                               const std::string& image_path, const std::string& mask_path) {
  nlohmann::json rec;
  rec["id"] = s.id;
  rec["split"] = split;
  rec["provenance"] = s.provenance;
  rec["image_path"] = image_path;
  if (!mask_path.empty()) {
    rec["label_path_or_class"] = mask_path;
  } else {
    rec["label_path_or_class"] = s.label;
  }
  rec["seed"] = s.seed;
  return rec;
}

int cmd_gen_data(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  const std::string root = cfg.paths.out_dir + "/data";
  std::string manifest;
  auto emit = [&](const std::vector<Sample>& samples, const std::string& split,
                  const std::string& suffix) {
    const std::string dir = root + "/" + split;
    art::ensure_dir(dir);
    for (const Sample& s : samples) {
      const std::string stem = sample_stem(dir, s);
      const std::string image_path = stem + suffix + "_img.pgm";
      write_pgm(image_path, s.image);
      std::string mask_path;
      if (!s.mask.empty()) {
        mask_path = stem + suffix + "_mask.pgm";
        write_pgm(mask_path, s.mask);
      }
      manifest += manifest_record(s, split, image_path, mask_path).dump() + "\n";
    }
  };
  emit(data.train, "train", "");
  emit(data.val, "val", "");
  emit(data.test_canonical, "test", "");
  emit(data.test, "test", "_t");
  for (std::size_t k = 0; k < data.test_maps.size(); ++k) {
    write_map_pfm(sample_stem(root + "/test", data.test[k]) + "_map.pfm", data.test_maps[k]);
  }
  art::write_text(root + "/manifest.jsonl", manifest);
  std::printf("gen-data: %zu train, %zu val, %zu test (+%zu transformed) -> %s\n",
              data.train.size(), data.val.size(), data.test_canonical.size(),
              data.test.size(), root.c_str());
  return 0;
}

std::string losses_csv(const std::vector<float>& losses) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", e, static_cast<double>(losses[e]));
    out += buf;
  }
  return out;
}

int cmd_train_vae(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  std::vector<float> losses;
  const VaeNet net = pl::train_vae_stage(cfg, data, &losses);
  art::ensure_dir(cfg.paths.out_dir + "/models");
  save_checkpoint(pl::model_path(cfg, "vae"), net.to_named());
  art::write_text(cfg.paths.out_dir + "/models/vae_losses.csv", losses_csv(losses));
  std::printf("train-vae: %d epochs, final loss %.6f -> %s\n", cfg.vae.train.epochs,
              static_cast<double>(losses.back()), pl::model_path(cfg, "vae").c_str());
  return 0;
}

int cmd_train_disc(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  std::vector<float> losses;
  const Discriminator net = pl::train_disc_stage(cfg, data, &losses);
  art::ensure_dir(cfg.paths.out_dir + "/models");
  save_checkpoint(pl::model_path(cfg, "disc"), net.to_named());
  art::write_text(cfg.paths.out_dir + "/models/disc_losses.csv", losses_csv(losses));
  RbfConfig val_rbf = cfg.data.rbf;
  val_rbf.seed = mix_seed(cfg.seed, pl::kDiscFake);
  const std::vector<Sample> val_fakes = make_transformed(data.val, val_rbf);
  const float sep = disc_separation(net, pl::images_of(data.val), pl::images_of(val_fakes));
  std::printf("train-disc: %d epochs, final loss %.6f, val separation %.4f -> %s\n",
              cfg.disc.train.epochs, static_cast<double>(losses.back()),
              static_cast<double>(sep), pl::model_path(cfg, "disc").c_str());
  return 0;
}

int cmd_train_inner(const CommonArgs& args, const std::string& variant) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  art::ensure_dir(cfg.paths.out_dir + "/models");

  if (variant == "naive" || variant == "both") {
    std::vector<float> losses;
    const InnerModel net = pl::train_inner_stage(cfg, data, false, &losses);
    save_checkpoint(pl::model_path(cfg, "inner"), net.to_named());
    art::write_text(cfg.paths.out_dir + "/models/inner_losses.csv", losses_csv(losses));
    std::printf("train-inner (naive): final loss %.6f -> %s\n",
                static_cast<double>(losses.back()), pl::model_path(cfg, "inner").c_str());
  }
  if (variant == "augmented" || variant == "both") {
    std::vector<float> losses;
    const InnerModel net = pl::train_inner_stage(cfg, data, true, &losses);
    save_checkpoint(pl::model_path(cfg, "augmented"), net.to_named());
    art::write_text(cfg.paths.out_dir + "/models/augmented_losses.csv", losses_csv(losses));
    std::printf("train-inner (augmented): final loss %.6f -> %s\n",
                static_cast<double>(losses.back()), pl::model_path(cfg, "augmented").c_str());
  }
  return 0;
}

std::string trace_jsonl(const std::vector<EnergyBreakdown>& trace) {
  std::string out;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    nlohmann::json rec;
    rec["step"] = k;
    rec["e_vae"] = trace[k].e_vae;
    rec["e_adv"] = trace[k].e_adv;
    rec["e_grad"] = trace[k].e_grad;
    rec["e_jac"] = trace[k].e_jac;
    rec["total"] = trace[k].total;
    out += rec.dump() + "\n";
  }
  return out;
}

int cmd_canonicalise(const CommonArgs& args, const std::string& input) {
  const RunConfig cfg = resolve_config(args);
  const Image x = read_pgm(input);
  const pl::EnergyHolder energy = pl::load_energy(cfg);
  CanonConfig cc = cfg.canon;
  cc.seed = mix_seed(cfg.seed, pl::kPairs);
  const CanonResult res = canonicalise(x, energy.model(), cc);
  const std::string dir = cfg.paths.out_dir + "/canon";
  art::ensure_dir(dir);
  write_pgm(dir + "/x_c.pgm", res.x_c);
  write_map_pfm(dir + "/g_fwd.pfm", res.g_forward);
  write_map_pfm(dir + "/g_inv.pfm", res.g_inverse);
  art::write_text(dir + "/trace.jsonl", trace_jsonl(res.trace));
  std::printf(
      "canonicalise: energy %.6f -> %.6f (best step %d%s) -> %s\n",
      static_cast<double>(res.trace.front().total),
      static_cast<double>(res.trace[static_cast<std::size_t>(res.best_step)].total),
      res.best_step, res.fell_back_to_identity ? ", identity fallback" : "", dir.c_str());
  return 0;
}

int cmd_segment(const CommonArgs& args, const std::string& input, bool naive) {
  const RunConfig cfg = resolve_config(args);
  const Image x = read_pgm(input);
  const InnerModel inner = pl::load_inner(cfg, "inner");
  Mask mask;
  if (naive) {
    mask = threshold_mask(segment_probs(inner, x), 0.5f);
  } else {
    const pl::EnergyHolder energy = pl::load_energy(cfg);
    CanonConfig cc = cfg.canon;
    cc.seed = mix_seed(cfg.seed, pl::kPairs);
    mask = equivariant_segment(inner, x, energy.model(), cc);
  }
  const std::string dir = cfg.paths.out_dir + "/segment";
  art::ensure_dir(dir);
  write_pgm(dir + "/mask.pgm", mask);
  std::size_t on = 0;
  for (std::uint8_t v : mask.data) on += v != 0;
  std::printf("segment: %zu foreground pixels -> %s/mask.pgm\n", on, dir.c_str());
  return 0;
}

int cmd_classify(const CommonArgs& args, const std::string& input, bool naive) {
  const RunConfig cfg = resolve_config(args);
  const Image x = read_pgm(input);
  const InnerModel inner = pl::load_inner(cfg, "inner");
  int pred;
  std::vector<float> logits;
  if (naive) {
    logits = classify_logits(inner, x);
    pred = argmax_class(logits);
  } else {
    const pl::EnergyHolder energy = pl::load_energy(cfg);
    CanonConfig cc = cfg.canon;
    cc.seed = mix_seed(cfg.seed, pl::kPairs);
    const CanonResult res = canonicalise(x, energy.model(), cc);
    logits = classify_logits(inner, res.x_c);
    pred = argmax_class(logits);
  }
  std::string logit_text;
  for (float v : logits) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %.4f", static_cast<double>(v));
    logit_text += buf;
  }
  std::printf("classify: class %d (logits:%s)\n", pred, logit_text.c_str());
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  const InnerModel inner = pl::load_inner(cfg, "inner");
  const InnerModel augmented = pl::load_inner(cfg, "augmented");
  const pl::EnergyHolder energy = pl::load_energy(cfg);
  BenchInputs in;
  in.inner = &inner;
  in.augmented = &augmented;
  in.energy = energy.model();
  in.canon = cfg.canon;
  in.canon.seed = mix_seed(cfg.seed, pl::kPairs);
  const BenchReport report = run_benchmark(in, data.test, cfg.jobs);
  const std::string dir = cfg.paths.out_dir + "/bench";
  art::ensure_dir(dir);
  art::write_text(dir + "/per_sample.csv", bench_csv(report));
  art::write_text(dir + "/summary.json", bench_summary_json(report));
  const char* metric = report.classification ? "acc" : "iou";
  for (const char* model : {"naive", "diffeonn", "augmented"}) {
    const Quantiles q = summarize(report.metric(model, metric));
    std::printf("bench: %-9s mean %s %.4f (median %.4f)\n", model, metric,
                static_cast<double>(q.mean), static_cast<double>(q.median));
  }
  std::printf("bench: reports -> %s\n", dir.c_str());
  return 0;
}

int cmd_invariance(const CommonArgs& args, int n_pairs) {
  const RunConfig cfg = resolve_config(args);
  const pl::PreparedData data = pl::prepare_data(cfg);
  const pl::EnergyHolder energy = pl::load_energy(cfg);
  std::vector<InvariancePair> pairs;
  const int n = std::min<int>(n_pairs, static_cast<int>(data.test.size()));
  for (int i = 0; i < n; ++i) {
    InvariancePair p;
    p.a = data.test_canonical[static_cast<std::size_t>(i)].image;
    p.b = data.test[static_cast<std::size_t>(i)].image;
    pairs.push_back(std::move(p));
  }
  CanonConfig cc = cfg.canon;
  cc.seed = mix_seed(cfg.seed, pl::kPairs);
  const InvarianceReport report = invariance_check(pairs, energy.model(), cc, cfg.jobs);
  const std::string dir = cfg.paths.out_dir + "/invariance";
  art::ensure_dir(dir);
  art::write_text(dir + "/pairs.csv", invariance_csv(report));
  for (const InvarianceRow& r : report.rows) {
    const Image strip = art::panel(
        {pairs[static_cast<std::size_t>(r.id)].a, r.a_canon,
         pairs[static_cast<std::size_t>(r.id)].b, r.b_canon});
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", r.id);
    write_pgm(dir + "/" + buf + "_panel.pgm", strip);
  }
  std::printf("invariance-check: median gap pre %.4f -> post %.4f over %zu pairs -> %s\n",
              static_cast<double>(report.median_pre), static_cast<double>(report.median_post),
              report.rows.size(), dir.c_str());
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const std::vector<PrimitiveCheck> table = primitive_gradient_table(cfg.seed);
  bool ok = true;
  std::printf("%-18s %s\n", "primitive", "max rel error");
  for (const PrimitiveCheck& row : table) {
    std::printf("%-18s %.3e\n", row.name.c_str(), static_cast<double>(row.max_rel_error));
    ok = ok && row.max_rel_error < 1e-3f;
  }
  if (!ok) {
    std::fprintf(stderr, "gradcheck: a primitive exceeded the 1e-3 bound\n");
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformation-canonicalising inference toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string input;
  std::string variant = "both";
  bool naive = false;
  int n_pairs = 20;

  CLI::App* c_gen = app.add_subcommand("gen-data", "Generate the configured dataset tree");
  add_common(c_gen, common);
  CLI::App* c_vae = app.add_subcommand("train-vae", "Train the appearance autoencoder");
  add_common(c_vae, common);
  CLI::App* c_disc = app.add_subcommand("train-disc", "Train the appearance critic");
  add_common(c_disc, common);
  CLI::App* c_inner = app.add_subcommand("train-inner", "Train the task model(s)");
  add_common(c_inner, common);
  c_inner->add_option("--variant", variant, "naive, augmented or both")
      ->check(CLI::IsMember({"naive", "augmented", "both"}));
  CLI::App* c_canon = app.add_subcommand("canonicalise", "Canonicalise one image");
  add_common(c_canon, common);
  c_canon->add_option("--input", input, "Input PGM image")->required();
  CLI::App* c_seg = app.add_subcommand("segment", "Segment one image");
  add_common(c_seg, common);
  c_seg->add_option("--input", input, "Input PGM image")->required();
  c_seg->add_flag("--naive", naive, "Skip canonicalisation");
  CLI::App* c_cls = app.add_subcommand("classify", "Classify one image");
  add_common(c_cls, common);
  c_cls->add_option("--input", input, "Input PGM image")->required();
  c_cls->add_flag("--naive", naive, "Skip canonicalisation");
  CLI::App* c_bench = app.add_subcommand("bench", "Run the three-model benchmark");
  add_common(c_bench, common);
  CLI::App* c_inv = app.add_subcommand("invariance-check", "Energy-gap check on image pairs");
  add_common(c_inv, common);
  c_inv->add_option("--pairs", n_pairs, "Number of pairs")->check(CLI::PositiveNumber);
  CLI::App* c_grad = app.add_subcommand("gradcheck", "Gradient checks for all primitives");
  add_common(c_grad, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(common);
    if (c_vae->parsed()) return cmd_train_vae(common);
    if (c_disc->parsed()) return cmd_train_disc(common);
    if (c_inner->parsed()) return cmd_train_inner(common, variant);
    if (c_canon->parsed()) return cmd_canonicalise(common, input);
    if (c_seg->parsed()) return cmd_segment(common, input, naive);
    if (c_cls->parsed()) return cmd_classify(common, input, naive);
    if (c_bench->parsed()) return cmd_bench(common);
    if (c_inv->parsed()) return cmd_invariance(common, n_pairs);
    if (c_grad->parsed()) return cmd_gradcheck(common);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
