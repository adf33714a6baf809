#include "polyseg/fsam.hpp"

#include <stdexcept>

namespace polyseg {

using namespace ops;

SubtractionUnit::SubtractionUnit(nn::Rng& rng, int64_t channels)
    : f_a(rng, channels, channels), f_b(rng, channels, channels) {
  register_module("f_a", f_a);
  register_module("f_b", f_b);
}

Tensor SubtractionUnit::forward(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape())
    throw std::invalid_argument("SubtractionUnit: operands " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  return abs_val(sub(f_a.forward(a), f_b.forward(b)));
}

void SubtractionUnit::tie_operands() { f_b.copy_from(f_a); }

OffsetPredictor::OffsetPredictor(nn::Rng& rng, int64_t channels) {
  conv = nn::Conv2d(rng, 2 * channels, 4, 3, 1, 1);
  conv.zero_init();
  register_module("conv", conv);
}

std::pair<Tensor, Tensor> OffsetPredictor::forward(const Tensor& c_up,
                                                   const Tensor& p) const {
  if (c_up.shape() != p.shape())
    throw std::invalid_argument("OffsetPredictor: operands " +
                                shape_str(c_up.shape()) + " vs " +
                                shape_str(p.shape()));
  Tensor fields = conv.forward(concat_channels(c_up, p));
  return {slice_channels(fields, 0, 2), slice_channels(fields, 2, 4)};
}

FeatureAlign::FeatureAlign(nn::Rng& rng, int64_t channels)
    : offsets(rng, channels) {
  register_module("offsets", offsets);
}

Tensor FeatureAlign::forward(const Tensor& coarse, const Tensor& fine) const {
  int64_t fh = fine.dim(2), fw = fine.dim(3);
  Tensor up;
  if (coarse.dim(2) == fh && coarse.dim(3) == fw) {
    up = coarse;  // same-resolution use inside CPM
  } else if (coarse.dim(2) * 2 == fh && coarse.dim(3) * 2 == fw) {
    up = upsample_bilinear(coarse, fh, fw);
  } else {
    throw std::invalid_argument(
        "FeatureAlign: operands must be the same scale or adjacent scales, "
        "got " + shape_str(coarse.shape()) + " vs " + shape_str(fine.shape()));
  }
  auto [delta_c, delta_p] = offsets.forward(up, fine);
  return add(warp_bilinear(up, delta_c), warp_bilinear(fine, delta_p));
}

Fsam::Fsam(nn::Rng& rng, const EncoderConfig& enc_cfg, int64_t width,
           FsamWiring wiring)
    : fuse(rng, width, width), width_(width), wiring_(wiring) {
  for (size_t i = 0; i < enc_cfg.stage_channels.size(); ++i) {
    projections.push_back(std::make_unique<nn::Conv2d>(
        rng, enc_cfg.stage_channels[i], width, 1, 1, 0));
    register_module("proj" + std::to_string(i + 1), *projections.back());
  }
  for (int i = 0; i < 3; ++i) {
    sus.push_back(std::make_unique<SubtractionUnit>(rng, width));
    register_module("su" + std::to_string(i), *sus.back());
  }
  for (int i = 0; i < 3; ++i) {
    fas.push_back(std::make_unique<FeatureAlign>(rng, width));
    register_module("fa" + std::to_string(i), *fas.back());
  }
  register_module("fuse", fuse);
  head = nn::Conv2d(rng, width, 1, 1, 1, 0);
  register_module("head", head);
}

HeadOutput Fsam::forward(const FeaturePyramid& pyr, int64_t out_h,
                         int64_t out_w) const {
  Tensor p1 = projections[0]->forward(pyr.x1);
  Tensor p2 = projections[1]->forward(pyr.x2);
  Tensor p3 = projections[2]->forward(pyr.x3);
  Tensor p4 = projections[3]->forward(pyr.x4);

  Tensor g;
  if (wiring_ == FsamWiring::kParallel) {
    // subtraction cascade, coarse to fine
    Tensor s = sus[0]->forward(upsample_bilinear(p4, p3.dim(2), p3.dim(3)), p3);
    s = sus[1]->forward(upsample_bilinear(s, p2.dim(2), p2.dim(3)), p2);
    s = sus[2]->forward(upsample_bilinear(s, p1.dim(2), p1.dim(3)), p1);
    // alignment cascade on the raw projected features
    Tensor a = fas[0]->forward(p4, p3);
    a = fas[1]->forward(a, p2);
    a = fas[2]->forward(a, p1);
    g = add(s, a);
  } else {
    // alignment feeds each subtraction stage directly
    Tensor f = p4;
    f = sus[0]->forward(fas[0]->forward(f, p3), p3);
    f = sus[1]->forward(fas[1]->forward(f, p2), p2);
    f = sus[2]->forward(fas[2]->forward(f, p1), p1);
    g = f;
  }

  HeadOutput out;
  out.feature = g;
  out.logits = upsample_bilinear(head.forward(fuse.forward(g)), out_h, out_w);
  return out;
}

}  // namespace polyseg
