#pragma once

#include "polyseg/ops.hpp"

namespace polyseg {

struct LossWeights {
  double gamma = 0.1;    // weight of the P1 auxiliary term
  double lambda = 1.0;   // weight of the P2 auxiliary term
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double boundary_weight_k = 5.0;
  // Ablation switches for the per-head combination.
  bool use_wbce = true;
  bool use_dice_focal = true;

  void validate() const;
};

// 1 + k*|mean15x15(gt) - gt|: grows near boundaries, exactly 1 in regions
// whose 15x15 neighbourhood is uniform. gt must be strictly binary.
Tensor pixel_weights(const Tensor& gt, double k);

// Weighted binary cross-entropy on logits: sum(w*bce)/sum(w).
Tensor wbce(const Tensor& logits, const Tensor& gt, const Tensor& weights);

// 1 - (2*sum(p*g)+1)/(sum(p)+sum(g)+1), per sample then batch-averaged.
Tensor dice_loss(const Tensor& probs, const Tensor& gt);

// mean(-alpha_t * (1-p_t)^gamma * log(p_t)) with probs clamped away from {0,1}.
Tensor focal_loss(const Tensor& probs, const Tensor& gt, double focal_gamma,
                  double focal_alpha);

struct LossBreakdown {
  double p1 = 0, p2 = 0, p3 = 0;
  double wbce = 0, dice = 0, focal = 0;  // sums across the three heads
  double total = 0;
};

// Per-head composite wBCE + Dice + Focal under the ablation switches.
Tensor head_loss(const Tensor& logits, const Tensor& gt, const LossWeights& lw,
                 double* wbce_out = nullptr, double* dice_out = nullptr,
                 double* focal_out = nullptr);

// gamma*L(P1) + lambda*L(P2) + L(P3); all logits at gt resolution.
Tensor total_loss(const Tensor& p1_logits, const Tensor& p2_logits,
                  const Tensor& p3_logits, const Tensor& gt,
                  const LossWeights& lw, LossBreakdown* breakdown = nullptr);

}  // namespace polyseg
