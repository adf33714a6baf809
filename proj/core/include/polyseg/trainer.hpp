#pragma once

#include "polyseg/checkpoint.hpp"
#include "polyseg/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace polyseg {

struct TrainResult {
  std::string checkpoint_path;
  std::vector<double> epoch_losses;
  double final_train_mdice = 0.0;
};

// Trains on <data_root>/images + masks, writing checkpoint.bin, train_log.csv
// and manifest.json under out_dir. Fully deterministic for a given config.
TrainResult train(const Config& cfg, const std::string& data_root,
                  const std::string& out_dir);

// Scores a checkpoint on a dataset folder at the native ground-truth sizes
// with no post-processing; optionally writes the per-image CSV report.
metrics::MetricReport evaluate_checkpoint(
    const std::string& ckpt_path, const std::string& data_root,
    std::optional<double> threshold = {}, const std::string& report_path = "");

// Writes 8-bit probability maps (and red/green/yellow overlays when gts_dir
// is given) for every image in images_dir.
void predict_dir(const std::string& ckpt_path, const std::string& images_dir,
                 const std::string& out_dir, const std::string& gts_dir = "");

struct AblationRun {
  std::string variant;
  uint64_t seed = 0;
  double mdice = 0.0, miou = 0.0;
};

// Trains and evaluates each requested variant per seed; variant_set is
// "structural", "loss" or "all". Runs execute in parallel worker threads
// unless POLYSEG_DETERMINISTIC or POLYSEG_THREADS=1 forces sequential order
// (results are identical either way; only scheduling changes).
std::vector<AblationRun> ablate(const Config& cfg, const std::string& data_root,
                                const std::string& out_dir,
                                const std::vector<uint64_t>& seeds,
                                const std::string& variant_set = "all");

std::string format_ablation_table(const std::vector<AblationRun>& runs);

}  // namespace polyseg
