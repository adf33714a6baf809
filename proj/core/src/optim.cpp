#include "polyseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace polyseg::optim {

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay,
             double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    auto& x = p.data();
    for (size_t i = 0; i < x.size(); ++i) {
      // decoupled decay first, then the Adam update
      x[i] -= lr_ * weight_decay_ * x[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamW::load_state(int64_t t, std::vector<std::vector<double>> m,
                       std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw std::invalid_argument("AdamW: state does not match parameter list");
  for (size_t k = 0; k < m_.size(); ++k)
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size())
      throw std::invalid_argument("AdamW: state size mismatch at slot " +
                                  std::to_string(k));
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    const auto& g = const_cast<Tensor&>(p).grad();
    for (double v : g) sq += v * v;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& v : const_cast<Tensor&>(p).grad()) v *= s;
    }
  }
  return norm;
}

double scheduled_lr(double base, double decay_rate, int64_t decay_every,
                    int64_t epoch) {
  if (decay_every <= 0) return base;
  return base * std::pow(decay_rate, static_cast<double>(epoch / decay_every));
}

}  // namespace polyseg::optim
