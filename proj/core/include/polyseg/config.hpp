#pragma once

#include "polyseg/data.hpp"
#include "polyseg/encoder.hpp"
#include "polyseg/fcam.hpp"
#include "polyseg/fsam.hpp"
#include "polyseg/losses.hpp"

#include <string>
#include <vector>

namespace polyseg {

enum class Ablation {
  kNone,
  kNoFcam,
  kNoFsam,
  kNoCpm,
  kLossNoDiceFocal,
  kLossNoWbce,
};

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct TrainParams {
  int64_t epochs = 135;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double decay_rate = 0.1;
  int64_t decay_every = 45;
  double grad_clip = 0.5;
  int64_t batch_size = 20;
  int64_t input_size = 352;
  bool multiscale = true;
  int64_t eval_every = 0;  // epochs between train-set metric logs; 0 disables
};

// Whole-experiment configuration; serialized as a flat key/value JSON object.
struct Config {
  uint64_t seed = 7;
  Ablation ablation = Ablation::kNone;
  TrainParams train;
  EncoderConfig encoder;
  int64_t fcam_groups = 16;
  int64_t spectral_grid = 7;
  // empty -> lowest zigzag components of the spectral grid
  std::vector<std::pair<int64_t, int64_t>> fcam_components;
  int64_t fusion_width = 32;
  FsamWiring wiring = FsamWiring::kParallel;
  double combine_w_init = 0.1;
  LossWeights loss;
  std::vector<double> scales = {0.75, 1.0, 1.25};
  data::NormConstants norm;

  DctPlan dct_plan() const;
  // loss weights with the loss-ablation switches applied
  LossWeights effective_loss() const;

  std::string to_json() const;
  static Config from_json(const std::string& text);
  static Config load(const std::string& path);
  void save(const std::string& path) const;

  // small model and short schedule for CPU-scale experiments
  static Config toy();
};

}  // namespace polyseg
