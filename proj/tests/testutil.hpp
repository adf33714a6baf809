#pragma once

#include "polyseg/nn.hpp"
#include "polyseg/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testutil {

inline polyseg::Tensor rand_tensor(polyseg::Shape shape, std::mt19937_64& gen,
                                   double lo = -1.0, double hi = 1.0,
                                   bool requires_grad = false) {
  polyseg::Tensor t = polyseg::Tensor::zeros(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Coordinate-wise central finite differences against reverse-mode gradients.
// `forward` must rebuild the graph from the leaves' current data.
inline double gradcheck_coord(const std::function<polyseg::Tensor()>& forward,
                              std::vector<polyseg::Tensor> leaves,
                              double eps = 1e-5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  polyseg::Tensor loss = forward();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    auto& x = leaves[k].data();
    for (size_t i = 0; i < x.size(); ++i) {
      double keep = x[i];
      x[i] = keep + eps;
      double up = forward().item();
      x[i] = keep - eps;
      double dn = forward().item();
      x[i] = keep;
      double fd = (up - dn) / (2.0 * eps);
      worst = std::max(worst, rel_err(fd, analytic[k][i]));
    }
  }
  return worst;
}

// Directional variant for larger graphs: one random unit direction across all
// leaves, three forward passes total.
inline double gradcheck_directional(
    const std::function<polyseg::Tensor()>& forward,
    std::vector<polyseg::Tensor> leaves, std::mt19937_64& gen,
    double eps = 1e-5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  polyseg::Tensor loss = forward();
  loss.backward();

  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  double norm_sq = 0.0;
  for (auto& l : leaves) {
    std::vector<double> d(l.data().size());
    for (auto& v : d) {
      v = dist(gen);
      norm_sq += v * v;
    }
    dirs.push_back(std::move(d));
  }
  double inv_norm = 1.0 / std::sqrt(norm_sq);
  double analytic = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    const auto& g = leaves[k].grad();
    for (size_t i = 0; i < g.size(); ++i)
      analytic += g[i] * dirs[k][i] * inv_norm;
  }

  auto shift = [&](double s) {
    for (size_t k = 0; k < leaves.size(); ++k)
      for (size_t i = 0; i < dirs[k].size(); ++i)
        leaves[k].data()[i] += s * dirs[k][i] * inv_norm;
  };
  shift(eps);
  double up = forward().item();
  shift(-2.0 * eps);
  double dn = forward().item();
  shift(eps);
  double fd = (up - dn) / (2.0 * eps);
  return rel_err(fd, analytic);
}

// Directional check over a module's parameters (plus optional extra leaves).
inline double gradcheck_params(const std::function<polyseg::Tensor()>& forward,
                               const polyseg::nn::Module& module,
                               std::mt19937_64& gen,
                               std::vector<polyseg::Tensor> extra = {},
                               double eps = 1e-5) {
  std::vector<polyseg::Tensor> leaves = module.parameters();
  leaves.insert(leaves.end(), extra.begin(), extra.end());
  return gradcheck_directional(forward, std::move(leaves), gen, eps);
}

}  // namespace testutil
