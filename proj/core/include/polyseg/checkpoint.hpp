#pragma once

#include "polyseg/model.hpp"
#include "polyseg/optim.hpp"

#include <string>

namespace polyseg {

struct Checkpoint {
  uint32_t version = 1;
  std::string config_json;
  int64_t epoch = 0;
  std::vector<std::pair<std::string, std::vector<double>>> params;
  std::vector<std::pair<std::string, std::vector<double>>> buffers;
  int64_t opt_steps = 0;
  std::vector<std::vector<double>> opt_m, opt_v;
  std::string rng_state;  // mt19937_64 stream serialization
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const SegModel& model, const optim::AdamW* opt,
                    int64_t epoch, const std::string& rng_state);
// Restores parameters and buffers by name; shapes must match exactly.
void restore(SegModel& model, optim::AdamW* opt, const Checkpoint& ckpt);

}  // namespace polyseg
