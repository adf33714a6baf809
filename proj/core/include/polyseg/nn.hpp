#pragma once

#include "polyseg/ops.hpp"
#include "polyseg/tensor.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace polyseg::nn {

// Deterministic RNG handed down through module constructors; parameter
// initialization order is fixed by construction order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}
  std::mt19937_64& gen() { return gen_; }
  double normal(double mean, double std) {
    return std::normal_distribution<double>(mean, std)(gen_);
  }
  // Resamples outside two standard deviations, matching common trunc-normal init.
  double trunc_normal(double std) {
    for (;;) {
      double v = normal(0.0, std);
      if (std::abs(v) <= 2.0 * std) return v;
    }
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  uint64_t integer(uint64_t bound) {  // [0, bound)
    return std::uniform_int_distribution<uint64_t>(0, bound - 1)(gen_);
  }

 private:
  std::mt19937_64 gen_;
};

Tensor trunc_normal_tensor(Rng& rng, Shape shape, double std = 0.02);

using NamedTensor = std::pair<std::string, Tensor>;

class Module {
 public:
  virtual ~Module() = default;

  std::vector<NamedTensor> named_parameters(const std::string& prefix = "") const;
  std::vector<NamedTensor> named_buffers(const std::string& prefix = "") const;
  std::vector<Tensor> parameters() const;

  void train(bool on = true);
  bool is_training() const { return training_; }

 protected:
  Tensor& register_parameter(const std::string& name, Tensor t);
  Tensor& register_buffer(const std::string& name, Tensor t);
  void register_module(const std::string& name, Module& m);

  bool training_ = true;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int kernel, int stride,
         int pad, int groups = 1, bool bias = true, double init_std = 0.02);
  Tensor forward(const Tensor& x) const;
  void zero_init();

  Tensor weight, bias_;
  int stride = 1, pad = 0, groups = 1;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(Rng& rng, int64_t in_f, int64_t out_f, double init_std = 0.02);
  Tensor forward(const Tensor& x) const;

  Tensor weight, bias_;
};

class LayerNormChannels : public Module {
 public:
  LayerNormChannels() = default;
  explicit LayerNormChannels(int64_t channels, double eps = 1e-6);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  double eps = 1e-6;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels, double momentum = 0.1,
                       double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta, running_mean, running_var;
  double momentum = 0.1, eps = 1e-5;
};

// 3x3 conv + batch norm + SiLU, the CBS unit used throughout the decoders.
class CbsUnit : public Module {
 public:
  CbsUnit() = default;
  CbsUnit(Rng& rng, int64_t in_ch, int64_t out_ch);
  Tensor forward(const Tensor& x) const;
  // Copies another unit's parameters; used by tests that need tied operands.
  void copy_from(const CbsUnit& other);

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace polyseg::nn
