#include "polyseg/cpm.hpp"

#include <stdexcept>

namespace polyseg {

using namespace ops;

Tensor cross_subtract(const Tensor& r1, const Tensor& r2) {
  if (r1.shape() != r2.shape())
    throw std::invalid_argument("cross_subtract: " + shape_str(r1.shape()) +
                                " vs " + shape_str(r2.shape()));
  return abs_val(sub(r1, r2));
}

Tensor final_combine(const Tensor& p1, const Tensor& p2, const Tensor& p3,
                     const Tensor& w) {
  if (p1.shape() != p2.shape() || p1.shape() != p3.shape())
    throw std::invalid_argument("final_combine: prediction shapes differ");
  return add(p3, mul_scalar_t(w, add(p1, p2)));
}

Cpm::Cpm(nn::Rng& rng, int64_t channels, int64_t n_groups)
    : align(rng, channels),
      attention(rng, channels, SpectralChannelAttention::QueryMode::kGap,
                DctPlan::default_plan(n_groups)) {
  head = nn::Conv2d(rng, channels, 1, 1, 1, 0);
  register_module("align", align);
  register_module("attention", attention);
  register_module("head", head);
}

HeadOutput Cpm::forward(const Tensor& r1, const Tensor& r2, int64_t out_h,
                        int64_t out_w) const {
  Tensor aligned = align.forward(r1, r2);
  Tensor z = add(attention.forward(aligned), cross_subtract(r1, r2));
  HeadOutput out;
  out.feature = z;
  out.logits = upsample_bilinear(head.forward(z), out_h, out_w);
  return out;
}

}  // namespace polyseg
