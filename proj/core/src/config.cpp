#include "polyseg/config.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace polyseg {

using nlohmann::json;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoFcam: return "no_fcam";
    case Ablation::kNoFsam: return "no_fsam";
    case Ablation::kNoCpm: return "no_cpm";
    case Ablation::kLossNoDiceFocal: return "loss_no_dice_focal";
    case Ablation::kLossNoWbce: return "loss_no_wbce";
  }
  return "none";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::kNone;
  if (s == "no_fcam") return Ablation::kNoFcam;
  if (s == "no_fsam") return Ablation::kNoFsam;
  if (s == "no_cpm") return Ablation::kNoCpm;
  if (s == "loss_no_dice_focal") return Ablation::kLossNoDiceFocal;
  if (s == "loss_no_wbce") return Ablation::kLossNoWbce;
  throw std::invalid_argument(
      "unknown ablation '" + s +
      "' (expected none|no_fcam|no_fsam|no_cpm|loss_no_dice_focal|loss_no_wbce)");
}

DctPlan Config::dct_plan() const {
  DctPlan plan;
  plan.n_groups = fcam_groups;
  plan.spectral_h = spectral_grid;
  plan.spectral_w = spectral_grid;
  plan.component_indices =
      fcam_components.empty()
          ? DctPlan::zigzag_low(fcam_groups, spectral_grid, spectral_grid)
          : fcam_components;
  return plan;
}

LossWeights Config::effective_loss() const {
  LossWeights lw = loss;
  if (ablation == Ablation::kLossNoDiceFocal) lw.use_dice_focal = false;
  if (ablation == Ablation::kLossNoWbce) lw.use_wbce = false;
  return lw;
}

std::string Config::to_json() const {
  json j;
  j["seed"] = seed;
  j["ablation"] = to_string(ablation);
  j["train.epochs"] = train.epochs;
  j["train.lr"] = train.lr;
  j["train.weight_decay"] = train.weight_decay;
  j["train.decay_rate"] = train.decay_rate;
  j["train.decay_every"] = train.decay_every;
  j["train.grad_clip"] = train.grad_clip;
  j["train.batch_size"] = train.batch_size;
  j["train.input_size"] = train.input_size;
  j["train.multiscale"] = train.multiscale;
  j["train.eval_every"] = train.eval_every;
  j["encoder.stage_channels"] = encoder.stage_channels;
  j["encoder.stage_depths"] = encoder.stage_depths;
  j["encoder.heads"] = encoder.heads_per_stage;
  j["encoder.kv_reduction_rates"] = encoder.kv_reduction_rates;
  j["encoder.patch_stride"] = encoder.patch_stride;
  j["encoder.mlp_ratio"] = encoder.mlp_ratio;
  j["fcam.n_groups"] = fcam_groups;
  j["fcam.spectral_grid"] = spectral_grid;
  {
    json comps = json::array();
    for (auto [u, v] : fcam_components) comps.push_back({u, v});
    j["fcam.components"] = comps;
  }
  j["fsam.width"] = fusion_width;
  j["fsam.wiring"] = wiring == FsamWiring::kParallel ? "parallel" : "interleaved";
  j["cpm.combine_w_init"] = combine_w_init;
  j["loss.gamma"] = loss.gamma;
  j["loss.lambda"] = loss.lambda;
  j["loss.focal_gamma"] = loss.focal_gamma;
  j["loss.focal_alpha"] = loss.focal_alpha;
  j["loss.boundary_weight_k"] = loss.boundary_weight_k;
  j["data.scales"] = scales;
  j["data.norm_mean"] = norm.mean;
  j["data.norm_std"] = norm.stddev;
  return j.dump(2) + "\n";
}

Config Config::from_json(const std::string& text) {
  json j = json::parse(text);
  Config c;
  json known = json::parse(c.to_json());
  for (auto& [key, value] : j.items())
    if (!known.contains(key))
      throw std::invalid_argument("config: unknown key '" + key + "'");

  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("seed", c.seed);
  if (j.contains("ablation"))
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  get("train.epochs", c.train.epochs);
  get("train.lr", c.train.lr);
  get("train.weight_decay", c.train.weight_decay);
  get("train.decay_rate", c.train.decay_rate);
  get("train.decay_every", c.train.decay_every);
  get("train.grad_clip", c.train.grad_clip);
  get("train.batch_size", c.train.batch_size);
  get("train.input_size", c.train.input_size);
  get("train.multiscale", c.train.multiscale);
  get("train.eval_every", c.train.eval_every);
  get("encoder.stage_channels", c.encoder.stage_channels);
  get("encoder.stage_depths", c.encoder.stage_depths);
  get("encoder.heads", c.encoder.heads_per_stage);
  get("encoder.kv_reduction_rates", c.encoder.kv_reduction_rates);
  get("encoder.patch_stride", c.encoder.patch_stride);
  get("encoder.mlp_ratio", c.encoder.mlp_ratio);
  get("fcam.n_groups", c.fcam_groups);
  get("fcam.spectral_grid", c.spectral_grid);
  if (j.contains("fcam.components")) {
    c.fcam_components.clear();
    for (const auto& p : j.at("fcam.components"))
      c.fcam_components.emplace_back(p.at(0).get<int64_t>(),
                                     p.at(1).get<int64_t>());
  }
  get("fsam.width", c.fusion_width);
  if (j.contains("fsam.wiring")) {
    std::string w = j.at("fsam.wiring").get<std::string>();
    if (w == "parallel") c.wiring = FsamWiring::kParallel;
    else if (w == "interleaved") c.wiring = FsamWiring::kInterleaved;
    else throw std::invalid_argument("config: fsam.wiring must be parallel|interleaved");
  }
  get("cpm.combine_w_init", c.combine_w_init);
  get("loss.gamma", c.loss.gamma);
  get("loss.lambda", c.loss.lambda);
  get("loss.focal_gamma", c.loss.focal_gamma);
  get("loss.focal_alpha", c.loss.focal_alpha);
  get("loss.boundary_weight_k", c.loss.boundary_weight_k);
  get("data.scales", c.scales);
  get("data.norm_mean", c.norm.mean);
  get("data.norm_std", c.norm.stddev);
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json(text);
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << to_json();
}

Config Config::toy() {
  Config c;
  c.encoder.stage_channels = {16, 32, 64, 128};
  c.encoder.stage_depths = {1, 1, 1, 1};
  c.encoder.heads_per_stage = {1, 2, 4, 8};
  c.encoder.kv_reduction_rates = {{4, 8}, {2, 4}, {1, 2}, {1, 1}};
  c.fcam_groups = 16;
  c.fusion_width = 16;
  c.train.input_size = 96;
  c.train.batch_size = 8;
  c.train.epochs = 20;
  c.train.lr = 3e-4;
  c.train.multiscale = false;
  return c;
}

}  // namespace polyseg
