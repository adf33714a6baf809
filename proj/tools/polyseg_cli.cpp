// Command-line front end: train / eval / predict / ablate / synth.

#include "polyseg/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace polyseg;

int main(int argc, char** argv) {
  CLI::App app{"polyp segmentation experiments"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt_path, report_path;
  std::string images_dir, gts_dir, variant_set = "all", seeds_csv = "";
  double threshold = -1.0;
  int64_t synth_n = 16, synth_size = 96;
  uint64_t synth_seed = 1;
  bool use_toy = false;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "experiment config (json)");
  train_cmd->add_flag("--toy", use_toy, "use the built-in toy config");
  train_cmd->add_option("--data", data_dir, "dataset root (images/, masks/)")
      ->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset root")->required();
  eval_cmd->add_option("--report", report_path, "per-image CSV output path");
  eval_cmd->add_option("--threshold", threshold,
                       "binarize predictions at this threshold before "
                       "dice/iou (default: threshold-free)");

  auto* predict_cmd = app.add_subcommand("predict", "write probability maps");
  predict_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  predict_cmd->add_option("--images", images_dir, "input image folder")
      ->required();
  predict_cmd->add_option("--out", out_dir, "output folder")->required();
  predict_cmd->add_option("--gts", gts_dir,
                          "mask folder; enables red/green/yellow overlays");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare variants");
  ablate_cmd->add_option("--config", config_path, "experiment config (json)");
  ablate_cmd->add_flag("--toy", use_toy, "use the built-in toy config");
  ablate_cmd->add_option("--data", data_dir, "dataset root")->required();
  ablate_cmd->add_option("--out", out_dir, "output directory")->required();
  ablate_cmd->add_option("--variants", variant_set, "structural|loss|all");
  ablate_cmd->add_option("--seeds", seeds_csv, "comma-separated seed list");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--n", synth_n, "number of images");
  synth_cmd->add_option("--size", synth_size, "image side length");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto load_cfg = [&]() {
      if (!config_path.empty()) return Config::load(config_path);
      if (use_toy) return Config::toy();
      return Config{};
    };

    if (*train_cmd) {
      Config cfg = load_cfg();
      TrainResult r = train(cfg, data_dir, out_dir);
      std::cout << "checkpoint: " << r.checkpoint_path << "\n";
      std::cout << "train mDice: " << r.final_train_mdice << "\n";
    } else if (*eval_cmd) {
      std::optional<double> thr;
      if (threshold >= 0.0) thr = threshold;
      metrics::MetricReport report =
          evaluate_checkpoint(ckpt_path, data_dir, thr, report_path);
      std::cout << report.table(data_dir);
      if (report.wfb_undefined_count > 0)
        std::cout << "note: " << report.wfb_undefined_count
                  << " image(s) with empty ground truth (wFb reported as 0)\n";
    } else if (*predict_cmd) {
      predict_dir(ckpt_path, images_dir, out_dir, gts_dir);
      std::cout << "wrote maps to " << out_dir << "\n";
    } else if (*ablate_cmd) {
      Config cfg = load_cfg();
      std::vector<uint64_t> seeds;
      if (seeds_csv.empty()) {
        seeds.push_back(cfg.seed);
      } else {
        std::stringstream ss(seeds_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
      }
      auto runs = ablate(cfg, data_dir, out_dir, seeds, variant_set);
      std::cout << format_ablation_table(runs);
    } else if (*synth_cmd) {
      data::synth_dataset(synth_n, synth_size, synth_seed, out_dir);
      std::cout << "wrote " << synth_n << " pairs to " << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
