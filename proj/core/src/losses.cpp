#include "polyseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace polyseg {

using namespace ops;

void LossWeights::validate() const {
  if (gamma < 0 || lambda < 0 || focal_gamma < 0)
    throw std::invalid_argument(
        "LossWeights: gamma, lambda and focal_gamma must be non-negative");
}

namespace {

void check_binary(const Tensor& gt, const char* op) {
  for (double v : gt.data())
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(std::string(op) +
                                  ": ground truth must be binary");
}

Tensor one_minus(const Tensor& x) { return add_scalar(neg(x), 1.0); }

}  // namespace

Tensor pixel_weights(const Tensor& gt, double k) {
  check_binary(gt, "pixel_weights");
  // averaged over in-bounds cells so uniform masks get weight exactly 1
  Tensor local_mean = avg_pool2d(gt, 15, 1, 7, /*count_include_pad=*/false);
  return add_scalar(scale(abs_val(sub(local_mean, gt)), k), 1.0);
}

Tensor wbce(const Tensor& logits, const Tensor& gt, const Tensor& weights) {
  if (logits.shape() != gt.shape() || logits.shape() != weights.shape())
    throw std::invalid_argument("wbce: shape mismatch");
  for (double v : logits.data())
    if (std::isnan(v)) throw std::domain_error("wbce: NaN logits");
  // stable form: max(z,0) - z*y + log(1+exp(-|z|))
  Tensor bce = add(sub(relu(logits), mul(logits, gt)),
                   log1p_t(exp_t(neg(abs_val(logits)))));
  return divide(sum_all(mul(weights, bce)), sum_all(weights));
}

Tensor dice_loss(const Tensor& probs, const Tensor& gt) {
  if (probs.shape() != gt.shape())
    throw std::invalid_argument("dice_loss: shape mismatch");
  for (double v : probs.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::domain_error("dice_loss: probabilities outside [0,1]");
  Tensor inter = sum_per_sample(mul(probs, gt));
  Tensor denom = add(sum_per_sample(probs), sum_per_sample(gt));
  Tensor ratio = divide(add_scalar(scale(inter, 2.0), 1.0),
                        add_scalar(denom, 1.0));
  return mean_all(one_minus(ratio));
}

Tensor focal_loss(const Tensor& probs, const Tensor& gt, double focal_gamma,
                  double focal_alpha) {
  if (probs.shape() != gt.shape())
    throw std::invalid_argument("focal_loss: shape mismatch");
  Tensor p = clamp(probs, 1e-6, 1.0 - 1e-6);
  Tensor pt = add(mul(p, gt), mul(one_minus(p), one_minus(gt)));
  // alpha_t depends only on gt, so it is a constant map
  Tensor alpha_t = Tensor::zeros(gt.shape());
  for (size_t i = 0; i < gt.data().size(); ++i)
    alpha_t.data()[i] =
        gt.data()[i] > 0.5 ? focal_alpha : 1.0 - focal_alpha;
  Tensor term = mul(alpha_t, mul(pow_scalar(one_minus(pt), focal_gamma),
                                 log_t(pt)));
  return neg(mean_all(term));
}

Tensor head_loss(const Tensor& logits, const Tensor& gt, const LossWeights& lw,
                 double* wbce_out, double* dice_out, double* focal_out) {
  check_binary(gt, "head_loss");
  Tensor total = Tensor::scalar(0.0);
  if (lw.use_wbce) {
    Tensor w = pixel_weights(gt, lw.boundary_weight_k);
    Tensor l = wbce(logits, gt, w);
    if (wbce_out) *wbce_out += l.item();
    total = add(total, l);
  }
  if (lw.use_dice_focal) {
    Tensor probs = sigmoid(logits);
    Tensor d = dice_loss(probs, gt);
    Tensor f = focal_loss(probs, gt, lw.focal_gamma, lw.focal_alpha);
    if (dice_out) *dice_out += d.item();
    if (focal_out) *focal_out += f.item();
    total = add(total, add(d, f));
  }
  return total;
}

Tensor total_loss(const Tensor& p1_logits, const Tensor& p2_logits,
                  const Tensor& p3_logits, const Tensor& gt,
                  const LossWeights& lw, LossBreakdown* breakdown) {
  lw.validate();
  if (p1_logits.shape() != gt.shape() || p2_logits.shape() != gt.shape() ||
      p3_logits.shape() != gt.shape())
    throw std::invalid_argument("total_loss: logits must match gt resolution");
  LossBreakdown local;
  Tensor l1 = head_loss(p1_logits, gt, lw, &local.wbce, &local.dice, &local.focal);
  Tensor l2 = head_loss(p2_logits, gt, lw, &local.wbce, &local.dice, &local.focal);
  Tensor l3 = head_loss(p3_logits, gt, lw, &local.wbce, &local.dice, &local.focal);
  local.p1 = l1.item();
  local.p2 = l2.item();
  local.p3 = l3.item();
  Tensor total = add(add(scale(l1, lw.gamma), scale(l2, lw.lambda)), l3);
  local.total = total.item();
  if (breakdown) *breakdown = local;
  return total;
}

}  // namespace polyseg
