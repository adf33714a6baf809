#include "polyseg/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace polyseg {

using namespace ops;

void EncoderConfig::validate() const {
  size_t n = stage_channels.size();
  if (n == 0 || stage_depths.size() != n || heads_per_stage.size() != n ||
      kv_reduction_rates.size() != n)
    throw std::invalid_argument("EncoderConfig: per-stage lists must agree");
  bool mixed = false;
  for (size_t s = 0; s < n; ++s) {
    if (s > 0 && stage_channels[s] <= stage_channels[s - 1])
      throw std::invalid_argument(
          "EncoderConfig: stage_channels must be strictly increasing");
    if (stage_channels[s] % heads_per_stage[s] != 0)
      throw std::invalid_argument(
          "EncoderConfig: heads must divide stage channels");
    if (kv_reduction_rates[s].empty())
      throw std::invalid_argument("EncoderConfig: empty rate list");
    int64_t first = head_rate(kv_reduction_rates[s], 0, heads_per_stage[s]);
    for (int64_t hd = 0; hd < heads_per_stage[s]; ++hd) {
      int64_t r = head_rate(kv_reduction_rates[s], hd, heads_per_stage[s]);
      if (r < 1 || (r & (r - 1)) != 0)
        throw std::invalid_argument(
            "EncoderConfig: reduction rates must be powers of two >= 1");
      if (r != first) mixed = true;
    }
  }
  if (!mixed)
    throw std::invalid_argument(
        "EncoderConfig: at least one stage must mix two distinct reduction "
        "rates across heads");
}

int64_t EncoderConfig::head_rate(const std::vector<int64_t>& rates, int64_t i,
                                 int64_t heads) {
  auto n = static_cast<int64_t>(rates.size());
  return rates[static_cast<size_t>(std::min((i * n) / heads, n - 1))];
}

ShuntedAttention::ShuntedAttention(nn::Rng& rng, int64_t channels,
                                   int64_t heads, std::vector<int64_t> rates)
    : channels_(channels), heads_(heads) {
  if (channels % heads != 0)
    throw std::invalid_argument("ShuntedAttention: heads must divide channels");
  for (int64_t i = 0; i < heads; ++i)
    head_rates_.push_back(EncoderConfig::head_rate(rates, i, heads));
  wq = nn::Linear(rng, channels, channels);
  wk = nn::Linear(rng, channels, channels);
  wv = nn::Linear(rng, channels, channels);
  wo = nn::Linear(rng, channels, channels);
  register_module("wq", wq);
  register_module("wk", wk);
  register_module("wv", wv);
  register_module("wo", wo);
  for (int64_t r : head_rates_) {
    if (r == 1 || reducers.count(r)) continue;
    reducers[r] = std::make_unique<nn::Conv2d>(rng, channels, channels,
                                               static_cast<int>(r),
                                               static_cast<int>(r), 0);
    reducer_norms[r] = std::make_unique<nn::LayerNormChannels>(channels);
    register_module("reduce" + std::to_string(r), *reducers.at(r));
    register_module("reduce_norm" + std::to_string(r), *reducer_norms.at(r));
  }
}

Tensor ShuntedAttention::forward(const Tensor& x) const {
  int64_t h = x.dim(2), w = x.dim(3);
  for (int64_t r : head_rates_)
    if (h % r != 0 || w % r != 0)
      throw std::invalid_argument(
          "ShuntedAttention: reduction rate " + std::to_string(r) +
          " does not divide feature map " + std::to_string(h) + "x" +
          std::to_string(w));
  int64_t d = channels_ / heads_;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor tokens = to_tokens(x);
  Tensor q = wq.forward(tokens);

  // keys/values per distinct rate, full width; heads slice their columns
  std::map<int64_t, Tensor> k_by_rate, v_by_rate;
  for (int64_t r : head_rates_) {
    if (k_by_rate.count(r)) continue;
    Tensor kv_tokens;
    if (r == 1) {
      kv_tokens = tokens;
    } else {
      Tensor red = reducers.at(r)->forward(x);
      kv_tokens = to_tokens(reducer_norms.at(r)->forward(red));
    }
    k_by_rate[r] = wk.forward(kv_tokens);
    v_by_rate[r] = wv.forward(kv_tokens);
  }

  std::vector<Tensor> head_outs;
  for (int64_t i = 0; i < heads_; ++i) {
    int64_t r = head_rates_[static_cast<size_t>(i)];
    Tensor qi = slice_lastdim(q, i * d, (i + 1) * d);
    Tensor ki = slice_lastdim(k_by_rate.at(r), i * d, (i + 1) * d);
    Tensor vi = slice_lastdim(v_by_rate.at(r), i * d, (i + 1) * d);
    Tensor scores = scale(bmm(qi, transpose_last2(ki)), att_scale);
    Tensor attn = softmax_lastdim(scores);
    head_outs.push_back(bmm(attn, vi));
  }
  Tensor merged = heads_ == 1 ? head_outs[0] : concat_lastdim(head_outs);
  return from_tokens(wo.forward(merged), h, w);
}

EncoderBlock::EncoderBlock(nn::Rng& rng, int64_t channels, int64_t heads,
                           std::vector<int64_t> rates, int64_t mlp_ratio)
    : norm1(channels), norm2(channels) {
  pos_conv = nn::Conv2d(rng, channels, channels, 3, 1, 1,
                        static_cast<int>(channels));
  attn = std::make_unique<ShuntedAttention>(rng, channels, heads, std::move(rates));
  mlp_fc1 = nn::Linear(rng, channels, channels * mlp_ratio);
  mlp_fc2 = nn::Linear(rng, channels * mlp_ratio, channels);
  register_module("pos_conv", pos_conv);
  register_module("norm1", norm1);
  register_module("attn", *attn);
  register_module("norm2", norm2);
  register_module("mlp_fc1", mlp_fc1);
  register_module("mlp_fc2", mlp_fc2);
}

Tensor EncoderBlock::forward(const Tensor& x) const {
  Tensor y = add(x, pos_conv.forward(x));
  y = add(y, attn->forward(norm1.forward(y)));
  int64_t h = y.dim(2), w = y.dim(3);
  Tensor m = to_tokens(norm2.forward(y));
  m = mlp_fc2.forward(gelu(mlp_fc1.forward(m)));
  return add(y, from_tokens(m, h, w));
}

Encoder::Encoder(nn::Rng& rng, EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  stem_ = nn::Conv2d(rng, cfg_.in_channels, cfg_.stage_channels[0], 7,
                     static_cast<int>(cfg_.patch_stride), 3);
  stem_norm_ = nn::LayerNormChannels(cfg_.stage_channels[0]);
  register_module("stem", stem_);
  register_module("stem_norm", stem_norm_);
  size_t n = cfg_.stage_channels.size();
  for (size_t s = 0; s < n; ++s) {
    if (s > 0) {
      merges_.push_back(std::make_unique<nn::Conv2d>(
          rng, cfg_.stage_channels[s - 1], cfg_.stage_channels[s], 3, 2, 1));
      merge_norms_.push_back(
          std::make_unique<nn::LayerNormChannels>(cfg_.stage_channels[s]));
      register_module("merge" + std::to_string(s), *merges_.back());
      register_module("merge_norm" + std::to_string(s), *merge_norms_.back());
    }
    stages_.emplace_back();
    for (int64_t b = 0; b < cfg_.stage_depths[s]; ++b) {
      stages_.back().push_back(std::make_unique<EncoderBlock>(
          rng, cfg_.stage_channels[s], cfg_.heads_per_stage[s],
          cfg_.kv_reduction_rates[s], cfg_.mlp_ratio));
      register_module("stage" + std::to_string(s + 1) + ".block" +
                          std::to_string(b),
                      *stages_.back().back());
    }
  }
}

Tensor Encoder::patch_embed(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != cfg_.in_channels)
    throw std::invalid_argument("patch_embed: expected [B," +
                                std::to_string(cfg_.in_channels) +
                                ",H,W], got " + shape_str(image.shape()));
  int64_t h = image.dim(2), w = image.dim(3);
  if (h % 32 != 0 || w % 32 != 0)
    throw std::invalid_argument(
        "patch_embed: input " + std::to_string(h) + "x" + std::to_string(w) +
        " must have height and width divisible by 32");
  return stem_norm_.forward(stem_.forward(image));
}

FeaturePyramid Encoder::encode(const Tensor& image) const {
  Tensor x = patch_embed(image);
  FeaturePyramid pyr;
  size_t n = cfg_.stage_channels.size();
  for (size_t s = 0; s < n; ++s) {
    if (s > 0)
      x = merge_norms_[s - 1]->forward(merges_[s - 1]->forward(x));
    for (const auto& blk : stages_[s]) x = blk->forward(x);
    if (s == 0) pyr.x1 = x;
    else if (s == 1) pyr.x2 = x;
    else if (s == 2) pyr.x3 = x;
    else pyr.x4 = x;
  }
  return pyr;
}

}  // namespace polyseg
