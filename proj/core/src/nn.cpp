#include "polyseg/nn.hpp"

#include <stdexcept>

namespace polyseg::nn {

Tensor trunc_normal_tensor(Rng& rng, Shape shape, double std) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = rng.trunc_normal(std);
  return t;
}

std::vector<NamedTensor> Module::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& [n, t] : params_) out.emplace_back(prefix + n, t);
  for (const auto& [n, m] : children_) {
    auto sub = m->named_parameters(prefix + n + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<NamedTensor> Module::named_buffers(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& [n, t] : buffers_) out.emplace_back(prefix + n, t);
  for (const auto& [n, m] : children_) {
    auto sub = m->named_buffers(prefix + n + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [n, m] : children_) m->train(on);
}

Tensor& Module::register_parameter(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

Tensor& Module::register_buffer(const std::string& name, Tensor t) {
  t.set_requires_grad(false);
  buffers_.emplace_back(name, std::move(t));
  return buffers_.back().second;
}

void Module::register_module(const std::string& name, Module& m) {
  children_.emplace_back(name, &m);
}

Conv2d::Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int kernel, int stride_,
               int pad_, int groups_, bool bias, double init_std) {
  if (in_ch % groups_ != 0 || out_ch % groups_ != 0)
    throw std::invalid_argument("Conv2d: channels not divisible by groups");
  stride = stride_;
  pad = pad_;
  groups = groups_;
  weight = register_parameter(
      "weight",
      trunc_normal_tensor(rng, {out_ch, in_ch / groups_, kernel, kernel}, init_std));
  if (bias) bias_ = register_parameter("bias", Tensor::zeros({out_ch}));
}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight, bias_, stride, pad, groups);
}

void Conv2d::zero_init() {
  std::fill(weight.data().begin(), weight.data().end(), 0.0);
  if (bias_.defined()) std::fill(bias_.data().begin(), bias_.data().end(), 0.0);
}

Linear::Linear(Rng& rng, int64_t in_f, int64_t out_f, double init_std) {
  weight = register_parameter("weight",
                              trunc_normal_tensor(rng, {out_f, in_f}, init_std));
  bias_ = register_parameter("bias", Tensor::zeros({out_f}));
}

Tensor Linear::forward(const Tensor& x) const {
  return ops::linear(x, weight, bias_);
}

LayerNormChannels::LayerNormChannels(int64_t channels, double eps_) : eps(eps_) {
  gamma = register_parameter("gamma", Tensor::full({channels}, 1.0));
  beta = register_parameter("beta", Tensor::zeros({channels}));
}

Tensor LayerNormChannels::forward(const Tensor& x) const {
  return ops::layernorm_channels(x, gamma, beta, eps);
}

BatchNorm2d::BatchNorm2d(int64_t channels, double momentum_, double eps_)
    : momentum(momentum_), eps(eps_) {
  gamma = register_parameter("gamma", Tensor::full({channels}, 1.0));
  beta = register_parameter("beta", Tensor::zeros({channels}));
  running_mean = register_buffer("running_mean", Tensor::zeros({channels}));
  running_var = register_buffer("running_var", Tensor::full({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
  return ops::batchnorm2d(x, gamma, beta, running_mean, running_var, training_,
                          momentum, eps);
}

CbsUnit::CbsUnit(Rng& rng, int64_t in_ch, int64_t out_ch) {
  conv = Conv2d(rng, in_ch, out_ch, 3, 1, 1);
  bn = BatchNorm2d(out_ch);
  register_module("conv", conv);
  register_module("bn", bn);
}

Tensor CbsUnit::forward(const Tensor& x) const {
  return ops::silu(bn.forward(conv.forward(x)));
}

void CbsUnit::copy_from(const CbsUnit& other) {
  conv.weight.data() = other.conv.weight.data();
  if (conv.bias_.defined()) conv.bias_.data() = other.conv.bias_.data();
  bn.gamma.data() = other.bn.gamma.data();
  bn.beta.data() = other.bn.beta.data();
  bn.running_mean.data() = other.bn.running_mean.data();
  bn.running_var.data() = other.bn.running_var.data();
}

}  // namespace polyseg::nn
