#pragma once

#include "polyseg/tensor.hpp"

namespace polyseg::ops {

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs_val(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor log1p_t(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor clamp(const Tensor& a, double lo, double hi);
// Broadcast multiply by a [1]-shaped (learnable) scalar.
Tensor mul_scalar_t(const Tensor& s, const Tensor& x);

// ---- reductions & shaping ---------------------------------------------------
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_per_sample(const Tensor& a);  // [B,...] -> [B]
Tensor reshape(const Tensor& a, Shape shape);
Tensor to_tokens(const Tensor& x);                       // [B,C,H,W] -> [B,HW,C]
Tensor from_tokens(const Tensor& t, int64_t h, int64_t w);  // [B,N,C] -> [B,C,h,w]
Tensor transpose_last2(const Tensor& a);
Tensor slice_lastdim(const Tensor& a, int64_t c0, int64_t c1);
Tensor concat_lastdim(const std::vector<Tensor>& ts);
Tensor concat_channels(const Tensor& a, const Tensor& b);     // NCHW, dim 1
Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1);

// ---- linear algebra ----------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k]x[B,k,n]
// y = x @ w^T + b with w stored [out,in]; x has trailing dim `in`.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor outer_bc(const Tensor& a, const Tensor& b);  // [B,m],[B,n] -> [B,m,n]

Tensor softmax_lastdim(const Tensor& a);  // max-subtracted, numerically stable

// ---- convolution & normalization ---------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad, int groups = 1);
// Batch statistics when `training`, running statistics otherwise; running
// buffers are updated in place during training forward passes.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor running_mean, Tensor running_var, bool training,
                   double momentum = 0.1, double eps = 1e-5);
// Normalizes over the channel dim at each (b,h,w) position.
Tensor layernorm_channels(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, double eps = 1e-6);

// ---- resampling & pooling ------------------------------------------------------
Tensor upsample_bilinear(const Tensor& x, int64_t oh, int64_t ow);  // align_corners=false
Tensor avg_pool2d(const Tensor& x, int k, int stride, int pad,
                  bool count_include_pad = true);  // divisor k*k, or valid cells
Tensor adaptive_avg_pool2d(const Tensor& x, int64_t oh, int64_t ow);
Tensor global_avg_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]
Tensor mean_over_w(const Tensor& x);      // -> [B,C,H,1]
Tensor mean_over_h(const Tensor& x);      // -> [B,C,1,W]
Tensor broadcast_w(const Tensor& x, int64_t w);  // [B,C,H,1] -> [B,C,H,w]
Tensor broadcast_h(const Tensor& x, int64_t h);  // [B,C,1,W] -> [B,C,h,W]

// ---- task-specific -------------------------------------------------------------
// Per-channel projection onto a fixed [bh,bw] basis: out[b,c] = sum x*B.
Tensor dct_project(const Tensor& x, const std::vector<double>& basis,
                   int64_t bh, int64_t bw);
// Bilinear-kernel resampling of x at (h+delta_v, w+delta_h); positions whose
// kernel support leaves the grid contribute zero. delta is [B,2,H,W] with
// channel 0 vertical and channel 1 horizontal, clamped to the map extent.
Tensor warp_bilinear(const Tensor& x, const Tensor& delta);

}  // namespace polyseg::ops
