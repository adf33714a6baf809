#include "polyseg/fcam.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace polyseg {

using namespace ops;

std::vector<double> dct_basis(int64_t h, int64_t w, int64_t u, int64_t v) {
  if (u < 0 || u >= h || v < 0 || v >= w)
    throw std::out_of_range("dct_basis: component (" + std::to_string(u) +
                            "," + std::to_string(v) + ") outside " +
                            std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> b(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h; ++i) {
    double ch = std::cos(std::numbers::pi * static_cast<double>(u) *
                         (static_cast<double>(i) + 0.5) / static_cast<double>(h));
    for (int64_t j = 0; j < w; ++j) {
      double cw = std::cos(std::numbers::pi * static_cast<double>(v) *
                           (static_cast<double>(j) + 0.5) / static_cast<double>(w));
      b[static_cast<size_t>(i * w + j)] = ch * cw;
    }
  }
  return b;
}

Tensor dct2d(const Tensor& x, int64_t u, int64_t v) {
  int64_t h = x.dim(2), w = x.dim(3);
  return dct_project(x, dct_basis(h, w, u, v), h, w);
}

void DctPlan::validate(int64_t channels) const {
  if (n_groups <= 0 || channels % n_groups != 0)
    throw std::invalid_argument("DctPlan: " + std::to_string(n_groups) +
                                " groups do not divide " +
                                std::to_string(channels) + " channels");
  if (static_cast<int64_t>(component_indices.size()) != n_groups)
    throw std::invalid_argument("DctPlan: need one (u,v) pair per group");
  std::set<std::pair<int64_t, int64_t>> seen;
  for (auto [u, v] : component_indices) {
    if (u < 0 || u >= spectral_h || v < 0 || v >= spectral_w)
      throw std::invalid_argument("DctPlan: component out of spectral grid");
    if (!seen.insert({u, v}).second)
      throw std::invalid_argument("DctPlan: duplicate component index");
  }
}

std::vector<std::pair<int64_t, int64_t>> DctPlan::zigzag_low(int64_t n,
                                                             int64_t grid_h,
                                                             int64_t grid_w) {
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t s = 0; s <= grid_h + grid_w - 2 &&
                      static_cast<int64_t>(out.size()) < n; ++s) {
    // walk each anti-diagonal, alternating direction
    if (s % 2 == 0) {
      for (int64_t u = std::min(s, grid_h - 1); u >= 0 && s - u < grid_w; --u) {
        out.emplace_back(u, s - u);
        if (static_cast<int64_t>(out.size()) == n) break;
      }
    } else {
      for (int64_t v = std::min(s, grid_w - 1); v >= 0 && s - v < grid_h; --v) {
        out.emplace_back(s - v, v);
        if (static_cast<int64_t>(out.size()) == n) break;
      }
    }
  }
  if (static_cast<int64_t>(out.size()) < n)
    throw std::invalid_argument("zigzag_low: grid too small for n components");
  return out;
}

DctPlan DctPlan::default_plan(int64_t n_groups) {
  DctPlan p;
  p.n_groups = n_groups;
  p.component_indices = zigzag_low(n_groups, p.spectral_h, p.spectral_w);
  return p;
}

PositionalPool::PositionalPool(nn::Rng& rng, int64_t channels) {
  conv_w = nn::Conv2d(rng, channels, channels, 1, 1, 0);
  conv_h = nn::Conv2d(rng, channels, channels, 1, 1, 0);
  proj = nn::Conv2d(rng, 2 * channels, channels, 1, 1, 0);
  register_module("conv_w", conv_w);
  register_module("conv_h", conv_h);
  register_module("proj", proj);
}

Tensor PositionalPool::forward(const Tensor& x) const {
  int64_t h = x.dim(2), w = x.dim(3);
  Tensor cv_w = conv_w.forward(mean_over_w(x));   // [B,C,H,1]
  Tensor cv_h = conv_h.forward(mean_over_h(x));   // [B,C,1,W]
  Tensor rep_w = broadcast_w(cv_w, w);
  Tensor rep_h = broadcast_h(cv_h, h);
  return proj.forward(concat_channels(rep_w, rep_h));
}

Tensor channel_affinity(const Tensor& q, const Tensor& k) {
  // scores[b,i,j] = q[b,i]*k[b,j]; softmax over i per fixed j
  Tensor scores_t = outer_bc(k, q);            // [b,j,i]
  Tensor a_t = softmax_lastdim(scores_t);      // normalized over i
  return transpose_last2(a_t);                 // [b,i,j]
}

Tensor full_attention(const Tensor& x, const Tensor& q, const Tensor& alpha) {
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor k = global_avg_pool(x);               // [B,C]
  Tensor a_t = softmax_lastdim(outer_bc(k, q));  // [b,j,i], sums to 1 over i
  Tensor v = reshape(x, {b, c, h * w});
  Tensor mixed = bmm(a_t, v);                  // out_j = sum_i A[i,j] V_i
  return add(mul_scalar_t(alpha, reshape(mixed, {b, c, h, w})), x);
}

SpectralChannelAttention::SpectralChannelAttention(nn::Rng& rng,
                                                   int64_t channels,
                                                   QueryMode mode_,
                                                   DctPlan plan_)
    : pool(rng, channels), plan(std::move(plan_)), mode(mode_),
      channels_(channels) {
  plan.validate(channels);
  register_module("pool", pool);
  alpha = register_parameter("alpha", Tensor::zeros({1}));
  if (mode == QueryMode::kDct)
    for (auto [u, v] : plan.component_indices)
      bases_.push_back(dct_basis(plan.spectral_h, plan.spectral_w, u, v));
}

Tensor SpectralChannelAttention::query(const Tensor& x) const {
  Tensor qp = pool.forward(x);
  int64_t group = channels_ / plan.n_groups;
  std::vector<Tensor> parts;
  if (mode == QueryMode::kDct) {
    Tensor pooled = adaptive_avg_pool2d(qp, plan.spectral_h, plan.spectral_w);
    for (int64_t g = 0; g < plan.n_groups; ++g) {
      Tensor slice = slice_channels(pooled, g * group, (g + 1) * group);
      parts.push_back(dct_project(slice, bases_[static_cast<size_t>(g)],
                                  plan.spectral_h, plan.spectral_w));
    }
  } else {
    for (int64_t g = 0; g < plan.n_groups; ++g)
      parts.push_back(
          global_avg_pool(slice_channels(qp, g * group, (g + 1) * group)));
  }
  return parts.size() == 1 ? parts[0] : concat_lastdim(parts);
}

Tensor SpectralChannelAttention::forward(const Tensor& x) const {
  return full_attention(x, query(x), alpha);
}

Fcam::Fcam(nn::Rng& rng, int64_t channels, DctPlan plan)
    : attention(rng, channels, SpectralChannelAttention::QueryMode::kDct,
                std::move(plan)) {
  head = nn::Conv2d(rng, channels, 1, 1, 1, 0);
  register_module("attention", attention);
  register_module("head", head);
}

HeadOutput Fcam::forward(const Tensor& x1, int64_t out_h, int64_t out_w) const {
  HeadOutput out;
  out.feature = attention.forward(x1);
  out.logits = upsample_bilinear(head.forward(out.feature), out_h, out_w);
  return out;
}

}  // namespace polyseg
