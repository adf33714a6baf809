#pragma once

#include "polyseg/nn.hpp"

#include <map>
#include <memory>
#include <vector>

namespace polyseg {

struct EncoderConfig {
  int64_t in_channels = 3;
  std::vector<int64_t> stage_channels = {32, 64, 128, 256};
  std::vector<int64_t> stage_depths = {1, 1, 2, 1};
  std::vector<int64_t> heads_per_stage = {1, 2, 4, 8};
  // Per-stage candidate reduction rates; heads are block-distributed over the
  // list (first half of the heads take the first rate, and so on).
  std::vector<std::vector<int64_t>> kv_reduction_rates = {
      {4, 8}, {2, 4}, {1, 2}, {1, 1}};
  int64_t patch_stride = 4;
  int64_t mlp_ratio = 2;

  void validate() const;
  // Effective rate for head `i` of `heads` given the stage's rate list.
  static int64_t head_rate(const std::vector<int64_t>& rates, int64_t i,
                           int64_t heads);
};

struct FeaturePyramid {
  Tensor x1, x2, x3, x4;  // strides 4, 8, 16, 32
};

// Multi-head self-attention where each head attends over keys/values taken
// from a spatial reduction of the input; distinct heads may use distinct
// reduction rates. Rate-1 heads read the unreduced map, so a layer whose
// rates are all 1 is exactly plain multi-head attention.
class ShuntedAttention : public nn::Module {
 public:
  ShuntedAttention(nn::Rng& rng, int64_t channels, int64_t heads,
                   std::vector<int64_t> rates);
  Tensor forward(const Tensor& x) const;

  int64_t channels() const { return channels_; }
  int64_t heads() const { return heads_; }
  const std::vector<int64_t>& head_rates() const { return head_rates_; }

  nn::Linear wq, wk, wv, wo;
  // one reduction conv + norm per distinct rate > 1
  std::map<int64_t, std::unique_ptr<nn::Conv2d>> reducers;
  std::map<int64_t, std::unique_ptr<nn::LayerNormChannels>> reducer_norms;

 private:
  int64_t channels_ = 0, heads_ = 0;
  std::vector<int64_t> head_rates_;
};

class EncoderBlock : public nn::Module {
 public:
  EncoderBlock(nn::Rng& rng, int64_t channels, int64_t heads,
               std::vector<int64_t> rates, int64_t mlp_ratio);
  Tensor forward(const Tensor& x) const;

  nn::Conv2d pos_conv;  // depthwise positional encoding
  nn::LayerNormChannels norm1, norm2;
  std::unique_ptr<ShuntedAttention> attn;
  nn::Linear mlp_fc1, mlp_fc2;
};

class Encoder : public nn::Module {
 public:
  Encoder(nn::Rng& rng, EncoderConfig cfg);

  // Stem: overlapping conv, stride = cfg.patch_stride.
  Tensor patch_embed(const Tensor& image) const;
  FeaturePyramid encode(const Tensor& image) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Conv2d stem_;
  nn::LayerNormChannels stem_norm_;
  std::vector<std::unique_ptr<nn::Conv2d>> merges_;
  std::vector<std::unique_ptr<nn::LayerNormChannels>> merge_norms_;
  std::vector<std::vector<std::unique_ptr<EncoderBlock>>> stages_;
};

}  // namespace polyseg
