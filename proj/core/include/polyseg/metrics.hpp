#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace polyseg::metrics {

// Plain row-major single-channel map; predictions live in [0,1], ground
// truths are strictly {0,1}.
struct Map2d {
  int64_t h = 0, w = 0;
  std::vector<double> v;

  Map2d() = default;
  Map2d(int64_t h_, int64_t w_, double fill = 0.0)
      : h(h_), w(w_), v(static_cast<size_t>(h_ * w_), fill) {}
  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * w + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * w + c)]; }
  int64_t numel() const { return h * w; }
};

// Soft Dice/IoU on the raw probability map; pass a threshold to binarize
// the prediction first.
std::pair<double, double> dice_iou(const Map2d& pred, const Map2d& gt,
                                   std::optional<double> threshold = {});

double mae(const Map2d& pred, const Map2d& gt);

struct WfbResult {
  double value = 0.0;
  bool empty_gt = false;  // the measure is undefined there; value reported as 0
};

// Weighted F-beta (beta^2 = 1): errors blurred by a 7x7 sigma=5 Gaussian
// inside the object, distance-decayed outside it.
WfbResult weighted_fbeta(const Map2d& pred, const Map2d& gt);

// Structure measure: alpha*S_object + (1-alpha)*S_region with the standard
// degenerate-gt fallbacks (empty gt -> 1-mean(pred), full gt -> mean(pred)).
double s_measure(const Map2d& pred, const Map2d& gt, double alpha = 0.5);

// Enhanced-alignment measure over 256 binarization thresholds; returns
// (mean, max) across thresholds, each normalized by the pixel count.
std::pair<double, double> e_measure(const Map2d& pred, const Map2d& gt);

// Exact Euclidean distance transform with the index of the nearest site;
// ties broken by (distance^2, row-major site index). Exposed for tests.
void distance_transform(const Map2d& sites, std::vector<double>& dist,
                        std::vector<int64_t>& index);

struct ImageMetrics {
  std::string id;
  double dice = 0, iou = 0, wfb = 0, s_alpha = 0, e_mean = 0, e_max = 0,
         mae = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;  // sorted by id
  int64_t wfb_undefined_count = 0;      // images with empty ground truth

  ImageMetrics dataset_means() const;
  std::string csv() const;
  // Human-readable summary: mDic, mIoU, wFb, Sa, mEe, maxEe, MAE.
  std::string table(const std::string& dataset_name = "dataset") const;
};

ImageMetrics score_pair(const std::string& id, const Map2d& pred,
                        const Map2d& gt, std::optional<double> threshold = {});

// Scores <stem>.png prediction maps against same-stem ground-truth masks;
// predictions are bilinearly resized to the ground-truth resolution first.
MetricReport evaluate_dataset(const std::string& pred_dir,
                              const std::string& gt_dir,
                              std::optional<double> threshold = {});

}  // namespace polyseg::metrics
