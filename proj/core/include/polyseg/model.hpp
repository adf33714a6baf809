#pragma once

#include "polyseg/config.hpp"
#include "polyseg/cpm.hpp"

#include <memory>

namespace polyseg {

struct PredictionTriple {
  Tensor p1, p2, p3;    // logits at the network input resolution
  Tensor final_logits;  // p3 + w*(p1+p2)
};

// Full network: encoder -> FCAM on X1 -> FSAM over the pyramid -> CPM fusing
// both -> weighted head combination. Structural ablations swap a module for
// the shape-preserving substitute named in the experiment config.
class SegModel : public nn::Module {
 public:
  SegModel(nn::Rng& rng, const Config& cfg);
  PredictionTriple forward(const Tensor& image) const;

  const Config& config() const { return cfg_; }
  Tensor combine_weight() const { return combine_w_; }

 private:
  Config cfg_;
  std::unique_ptr<Encoder> encoder_;

  std::unique_ptr<Fcam> fcam_;
  std::unique_ptr<nn::Conv2d> fcam_sub_;       // no_fcam: 1x1 conv on X1
  std::unique_ptr<nn::Conv2d> fcam_sub_head_;

  std::unique_ptr<nn::Conv2d> r1_proj_;        // C1 -> fusion width

  std::unique_ptr<Fsam> fsam_;
  std::vector<std::unique_ptr<nn::Conv2d>> plain_projs_;  // no_fsam fusion
  std::unique_ptr<nn::Conv2d> plain_head_;

  std::unique_ptr<Cpm> cpm_;
  std::unique_ptr<nn::Conv2d> cpm_sub_head_;   // no_cpm: head on R1+R2

  Tensor combine_w_;
};

}  // namespace polyseg
