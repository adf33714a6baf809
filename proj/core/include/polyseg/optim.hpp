#pragma once

#include "polyseg/tensor.hpp"

#include <vector>

namespace polyseg::optim {

// Decoupled weight decay Adam. State vectors are exposed for checkpointing.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  int64_t steps() const { return t_; }
  std::vector<std::vector<double>>& exp_avg() { return m_; }
  std::vector<std::vector<double>>& exp_avg_sq() { return v_; }
  void load_state(int64_t t, std::vector<std::vector<double>> m,
                  std::vector<std::vector<double>> v);

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global l2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(const std::vector<Tensor>& params, double max_norm);

// Step decay: base * rate^(epoch / every).
double scheduled_lr(double base, double decay_rate, int64_t decay_every,
                    int64_t epoch);

}  // namespace polyseg::optim
