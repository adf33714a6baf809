#pragma once

#include "polyseg/nn.hpp"

#include <utility>
#include <vector>

namespace polyseg {

// Basis matrix for one 2D-DCT component (u,v), sampled on an HxW grid:
//   B[h,w] = cos(pi*u*(h+1/2)/H) * cos(pi*v*(w+1/2)/W)
// Distinct components are exactly orthogonal under the grid inner product.
std::vector<double> dct_basis(int64_t h, int64_t w, int64_t u, int64_t v);

// Per-channel projection onto component (u,v): out[b,c] = <x[b,c], B^{u,v}>.
Tensor dct2d(const Tensor& x, int64_t u, int64_t v);

struct DctPlan {
  int64_t n_groups = 16;
  std::vector<std::pair<int64_t, int64_t>> component_indices;  // (u,v) per group
  int64_t spectral_h = 7, spectral_w = 7;  // maps are pooled here before the DCT

  void validate(int64_t channels) const;
  // The n lowest-frequency (u,v) pairs in zigzag order over the spectral grid.
  static std::vector<std::pair<int64_t, int64_t>> zigzag_low(int64_t n,
                                                             int64_t grid_h,
                                                             int64_t grid_w);
  static DctPlan default_plan(int64_t n_groups = 16);
};

// Row/column context pooling: each spatial location receives the projected
// mean of its row and of its column, fused back to C channels by a 1x1 conv.
class PositionalPool : public nn::Module {
 public:
  PositionalPool() = default;
  PositionalPool(nn::Rng& rng, int64_t channels);
  Tensor forward(const Tensor& x) const;

  nn::Conv2d conv_w, conv_h, proj;
};

// Channel affinity A[b,i,j] = softmax_i(Q_i * K_j); each column over i sums
// to one. Exposed separately so the normalization contract is testable.
Tensor channel_affinity(const Tensor& q, const Tensor& k);

// out_j = alpha * sum_i A[i,j] * V_i + X_j with K the channel-mean descriptor
// of X and V the flattened spatial maps of X.
Tensor full_attention(const Tensor& x, const Tensor& q, const Tensor& alpha);

// Channel attention whose query comes from positional pooling followed by
// either multispectral DCT components (FCAM) or plain per-group averages
// (the DCT-free variant used inside CPM).
class SpectralChannelAttention : public nn::Module {
 public:
  enum class QueryMode { kDct, kGap };

  SpectralChannelAttention(nn::Rng& rng, int64_t channels, QueryMode mode,
                           DctPlan plan);
  Tensor query(const Tensor& x) const;  // [B,C]
  Tensor forward(const Tensor& x) const;

  PositionalPool pool;
  DctPlan plan;
  QueryMode mode;
  Tensor alpha;  // learnable residual scale, starts at 0

 private:
  int64_t channels_;
  std::vector<std::vector<double>> bases_;  // per group, when mode == kDct
};

struct HeadOutput {
  Tensor feature;  // enhanced map at the feature resolution
  Tensor logits;   // [B,1,out_h,out_w] at the network input resolution
};

class Fcam : public nn::Module {
 public:
  Fcam(nn::Rng& rng, int64_t channels, DctPlan plan);
  HeadOutput forward(const Tensor& x1, int64_t out_h, int64_t out_w) const;

  SpectralChannelAttention attention;
  nn::Conv2d head;
};

}  // namespace polyseg
