#pragma once

#include "polyseg/fsam.hpp"

namespace polyseg {

// |r1 - r2|, elementwise.
Tensor cross_subtract(const Tensor& r1, const Tensor& r2);

// final = p3 + w*(p1 + p2); sigmoid is applied by the caller for mask output.
Tensor final_combine(const Tensor& p1, const Tensor& p2, const Tensor& p3,
                     const Tensor& w);

// Fuses the frequency-enhanced feature R1 and the aligned global feature R2:
// Z = Att(f_a(R1,R2)) + |R1-R2| with the attention query built from plain
// per-group averages (no DCT), then a 1x1 head produces P3 logits.
class Cpm : public nn::Module {
 public:
  Cpm(nn::Rng& rng, int64_t channels, int64_t n_groups);
  HeadOutput forward(const Tensor& r1, const Tensor& r2, int64_t out_h,
                     int64_t out_w) const;

  FeatureAlign align;
  SpectralChannelAttention attention;
  nn::Conv2d head;
};

}  // namespace polyseg
