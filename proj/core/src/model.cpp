#include "polyseg/model.hpp"

namespace polyseg {

using namespace ops;

SegModel::SegModel(nn::Rng& rng, const Config& cfg) : cfg_(cfg) {
  encoder_ = std::make_unique<Encoder>(rng, cfg_.encoder);
  register_module("encoder", *encoder_);
  int64_t c1 = cfg_.encoder.stage_channels[0];
  int64_t cu = cfg_.fusion_width;

  if (cfg_.ablation == Ablation::kNoFcam) {
    fcam_sub_ = std::make_unique<nn::Conv2d>(rng, c1, c1, 1, 1, 0);
    fcam_sub_head_ = std::make_unique<nn::Conv2d>(rng, c1, 1, 1, 1, 0);
    register_module("fcam_sub", *fcam_sub_);
    register_module("fcam_sub_head", *fcam_sub_head_);
  } else {
    fcam_ = std::make_unique<Fcam>(rng, c1, cfg_.dct_plan());
    register_module("fcam", *fcam_);
  }

  r1_proj_ = std::make_unique<nn::Conv2d>(rng, c1, cu, 1, 1, 0);
  register_module("r1_proj", *r1_proj_);

  if (cfg_.ablation == Ablation::kNoFsam) {
    for (size_t i = 0; i < cfg_.encoder.stage_channels.size(); ++i) {
      plain_projs_.push_back(std::make_unique<nn::Conv2d>(
          rng, cfg_.encoder.stage_channels[i], cu, 1, 1, 0));
      register_module("plain_proj" + std::to_string(i + 1), *plain_projs_.back());
    }
    plain_head_ = std::make_unique<nn::Conv2d>(rng, cu, 1, 1, 1, 0);
    register_module("plain_head", *plain_head_);
  } else {
    fsam_ = std::make_unique<Fsam>(rng, cfg_.encoder, cu, cfg_.wiring);
    register_module("fsam", *fsam_);
  }

  if (cfg_.ablation == Ablation::kNoCpm) {
    cpm_sub_head_ = std::make_unique<nn::Conv2d>(rng, cu, 1, 1, 1, 0);
    register_module("cpm_sub_head", *cpm_sub_head_);
  } else {
    cpm_ = std::make_unique<Cpm>(rng, cu, cfg_.fcam_groups);
    register_module("cpm", *cpm_);
  }

  combine_w_ = register_parameter("combine_w",
                                  Tensor::scalar(cfg_.combine_w_init));
}

PredictionTriple SegModel::forward(const Tensor& image) const {
  int64_t out_h = image.dim(2), out_w = image.dim(3);
  FeaturePyramid pyr = encoder_->encode(image);

  Tensor f1, p1;
  if (fcam_) {
    HeadOutput fo = fcam_->forward(pyr.x1, out_h, out_w);
    f1 = fo.feature;
    p1 = fo.logits;
  } else {
    f1 = fcam_sub_->forward(pyr.x1);
    p1 = upsample_bilinear(fcam_sub_head_->forward(f1), out_h, out_w);
  }
  Tensor r1 = r1_proj_->forward(f1);

  Tensor g, p2;
  if (fsam_) {
    HeadOutput so = fsam_->forward(pyr, out_h, out_w);
    g = so.feature;
    p2 = so.logits;
  } else {
    // plain upsample-add fusion of the projected pyramid
    int64_t gh = pyr.x1.dim(2), gw = pyr.x1.dim(3);
    g = plain_projs_[0]->forward(pyr.x1);
    const Tensor* levels[3] = {&pyr.x2, &pyr.x3, &pyr.x4};
    for (int i = 0; i < 3; ++i)
      g = add(g, upsample_bilinear(
                     plain_projs_[static_cast<size_t>(i + 1)]->forward(*levels[i]),
                     gh, gw));
    p2 = upsample_bilinear(plain_head_->forward(g), out_h, out_w);
  }

  Tensor p3;
  if (cpm_) {
    HeadOutput co = cpm_->forward(r1, g, out_h, out_w);
    p3 = co.logits;
  } else {
    p3 = upsample_bilinear(cpm_sub_head_->forward(add(r1, g)), out_h, out_w);
  }

  PredictionTriple out;
  out.p1 = p1;
  out.p2 = p2;
  out.p3 = p3;
  out.final_logits = final_combine(p1, p2, p3, combine_w_);
  return out;
}

}  // namespace polyseg
