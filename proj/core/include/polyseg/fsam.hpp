#pragma once

#include "polyseg/encoder.hpp"
#include "polyseg/fcam.hpp"
#include "polyseg/nn.hpp"

#include <memory>
#include <utility>

namespace polyseg {

// |f_a(a) - f_b(b)| with one CBS unit per operand.
class SubtractionUnit : public nn::Module {
 public:
  SubtractionUnit(nn::Rng& rng, int64_t channels);
  Tensor forward(const Tensor& a, const Tensor& b) const;
  void tie_operands();  // copies f_a's parameters into f_b

  nn::CbsUnit f_a, f_b;
};

// 3x3 conv over the concatenated operands emitting two 2-channel offset
// fields. Zero-initialized so alignment starts as plain upsample-add.
class OffsetPredictor : public nn::Module {
 public:
  OffsetPredictor(nn::Rng& rng, int64_t channels);
  std::pair<Tensor, Tensor> forward(const Tensor& c_up, const Tensor& p) const;

  nn::Conv2d conv;
};

// Offset-compensated fusion of a coarse and a fine map: the coarse operand is
// upsampled to the fine resolution (identity when they already match), both
// operands are warped by predicted offsets, and the results are summed.
class FeatureAlign : public nn::Module {
 public:
  FeatureAlign(nn::Rng& rng, int64_t channels);
  Tensor forward(const Tensor& coarse, const Tensor& fine) const;

  OffsetPredictor offsets;
};

enum class FsamWiring { kParallel, kInterleaved };

class Fsam : public nn::Module {
 public:
  Fsam(nn::Rng& rng, const EncoderConfig& enc_cfg, int64_t width,
       FsamWiring wiring);
  // Returns the fused stride-4 feature G and P2 logits at (out_h, out_w).
  HeadOutput forward(const FeaturePyramid& pyr, int64_t out_h,
                     int64_t out_w) const;

  int64_t width() const { return width_; }
  FsamWiring wiring() const { return wiring_; }

  std::vector<std::unique_ptr<nn::Conv2d>> projections;  // X4..X1 order-independent, indexed 0..3 for X1..X4
  std::vector<std::unique_ptr<SubtractionUnit>> sus;     // su[0]=coarsest pair
  std::vector<std::unique_ptr<FeatureAlign>> fas;
  nn::CbsUnit fuse;
  nn::Conv2d head;

 private:
  int64_t width_;
  FsamWiring wiring_;
};

}  // namespace polyseg
