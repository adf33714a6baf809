#pragma once

// Independent reference implementations used only by tests: straightforward
// loop transcriptions, no shared helpers with the library code they check.

#include "polyseg/encoder.hpp"
#include "polyseg/metrics.hpp"
#include "polyseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

// ---- 2D DCT, naive double loop ------------------------------------------------

inline double dct2d_single(const std::vector<double>& x, int64_t h, int64_t w,
                           int64_t u, int64_t v) {
  constexpr double pi = 3.14159265358979323846;
  double acc = 0.0;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      acc += x[static_cast<size_t>(i * w + j)] *
             std::cos(pi * static_cast<double>(u) * (static_cast<double>(i) + 0.5) /
                      static_cast<double>(h)) *
             std::cos(pi * static_cast<double>(v) * (static_cast<double>(j) + 0.5) /
                      static_cast<double>(w));
  return acc;
}

// ---- Eq.-style bilinear warp, quadruple loop ----------------------------------

// U[c,h,w] = sum_{h',w'} F[c,h',w'] * max(0,1-|h+d1-h'|) * max(0,1-|w+d2-w'|)
inline std::vector<double> warp_quadloop(const std::vector<double>& f,
                                         int64_t c, int64_t h, int64_t w,
                                         const std::vector<double>& delta) {
  std::vector<double> out(static_cast<size_t>(c * h * w), 0.0);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double d1 = delta[static_cast<size_t>(y * w + x)];
        double d2 = delta[static_cast<size_t>(h * w + y * w + x)];
        double acc = 0.0;
        for (int64_t yy = 0; yy < h; ++yy)
          for (int64_t xx = 0; xx < w; ++xx) {
            double ky = std::max(0.0, 1.0 - std::abs(static_cast<double>(y) + d1 -
                                                     static_cast<double>(yy)));
            double kx = std::max(0.0, 1.0 - std::abs(static_cast<double>(x) + d2 -
                                                     static_cast<double>(xx)));
            acc += f[static_cast<size_t>(ci * h * w + yy * w + xx)] * ky * kx;
          }
        out[static_cast<size_t>(ci * h * w + y * w + x)] = acc;
      }
  return out;
}

// ---- plain multi-head attention, loop form -------------------------------------

struct AttnWeights {
  // all [C][C] row-major, out-of-in layout, plus biases [C]
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
  int64_t c = 0, heads = 0;
};

inline std::vector<double> linear_rows(const std::vector<double>& x, int64_t n,
                                       int64_t cin, const std::vector<double>& w,
                                       const std::vector<double>& b,
                                       int64_t cout) {
  std::vector<double> y(static_cast<size_t>(n * cout), 0.0);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t o = 0; o < cout; ++o) {
      double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
      for (int64_t i = 0; i < cin; ++i)
        acc += x[static_cast<size_t>(r * cin + i)] *
               w[static_cast<size_t>(o * cin + i)];
      y[static_cast<size_t>(r * cout + o)] = acc;
    }
  return y;
}

// tokens [N,C] in, tokens [N,C] out
inline std::vector<double> plain_mhsa(const std::vector<double>& tokens,
                                      int64_t n, const AttnWeights& w) {
  int64_t c = w.c, heads = w.heads, d = c / heads;
  std::vector<double> q = linear_rows(tokens, n, c, w.wq, w.bq, c);
  std::vector<double> k = linear_rows(tokens, n, c, w.wk, w.bk, c);
  std::vector<double> v = linear_rows(tokens, n, c, w.wv, w.bv, c);
  std::vector<double> merged(static_cast<size_t>(n * c), 0.0);
  for (int64_t hd = 0; hd < heads; ++hd) {
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<size_t>(n));
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t t = 0; t < d; ++t)
          s += q[static_cast<size_t>(i * c + hd * d + t)] *
               k[static_cast<size_t>(j * c + hd * d + t)];
        s /= std::sqrt(static_cast<double>(d));
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int64_t t = 0; t < d; ++t) {
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j)
          acc += scores[static_cast<size_t>(j)] / z *
                 v[static_cast<size_t>(j * c + hd * d + t)];
        merged[static_cast<size_t>(i * c + hd * d + t)] = acc;
      }
    }
  }
  return linear_rows(merged, n, c, w.wo, w.bo, c);
}

// shunted variant: per-head K/V computed on an explicitly reduced map
// (conv kernel=stride=r, then channel layer norm), mirroring the layer's
// parameters but evaluated with plain loops.
inline std::vector<double> shunted_attention_loops(
    const polyseg::ShuntedAttention& layer, const std::vector<double>& x,
    int64_t c, int64_t h, int64_t w) {
  int64_t heads = layer.heads(), d = c / heads;
  int64_t n = h * w;
  std::vector<double> tokens(static_cast<size_t>(n * c));
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t p = 0; p < n; ++p)
      tokens[static_cast<size_t>(p * c + ci)] = x[static_cast<size_t>(ci * n + p)];

  AttnWeights wt;
  wt.c = c;
  wt.heads = heads;
  wt.wq = layer.wq.weight.data();
  wt.bq = layer.wq.bias_.data();
  wt.wk = layer.wk.weight.data();
  wt.bk = layer.wk.bias_.data();
  wt.wv = layer.wv.weight.data();
  wt.bv = layer.wv.bias_.data();

  std::vector<double> q = linear_rows(tokens, n, c, wt.wq, wt.bq, c);
  std::vector<double> merged(static_cast<size_t>(n * c), 0.0);

  for (int64_t hd = 0; hd < heads; ++hd) {
    int64_t r = layer.head_rates()[static_cast<size_t>(hd)];
    std::vector<double> kv_tokens;
    int64_t nr;
    if (r == 1) {
      kv_tokens = tokens;
      nr = n;
    } else {
      int64_t hr = h / r, wr = w / r;
      nr = hr * wr;
      const auto& cw = layer.reducers.at(r)->weight.data();
      const auto& cb = layer.reducers.at(r)->bias_.data();
      std::vector<double> red(static_cast<size_t>(c * nr), 0.0);
      for (int64_t co = 0; co < c; ++co)
        for (int64_t oy = 0; oy < hr; ++oy)
          for (int64_t ox = 0; ox < wr; ++ox) {
            double acc = cb[static_cast<size_t>(co)];
            for (int64_t ci = 0; ci < c; ++ci)
              for (int64_t ky = 0; ky < r; ++ky)
                for (int64_t kx = 0; kx < r; ++kx)
                  acc += cw[static_cast<size_t>(((co * c + ci) * r + ky) * r + kx)] *
                         x[static_cast<size_t>(ci * n + (oy * r + ky) * w +
                                               (ox * r + kx))];
            red[static_cast<size_t>(co * nr + oy * wr + ox)] = acc;
          }
      const auto& gamma = layer.reducer_norms.at(r)->gamma.data();
      const auto& beta = layer.reducer_norms.at(r)->beta.data();
      kv_tokens.assign(static_cast<size_t>(nr * c), 0.0);
      for (int64_t p = 0; p < nr; ++p) {
        double mean = 0.0;
        for (int64_t ci = 0; ci < c; ++ci)
          mean += red[static_cast<size_t>(ci * nr + p)];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t ci = 0; ci < c; ++ci) {
          double dv = red[static_cast<size_t>(ci * nr + p)] - mean;
          var += dv * dv;
        }
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + 1e-6);
        for (int64_t ci = 0; ci < c; ++ci)
          kv_tokens[static_cast<size_t>(p * c + ci)] =
              gamma[static_cast<size_t>(ci)] *
                  (red[static_cast<size_t>(ci * nr + p)] - mean) * inv +
              beta[static_cast<size_t>(ci)];
      }
    }
    std::vector<double> k = linear_rows(kv_tokens, nr, c, wt.wk, wt.bk, c);
    std::vector<double> v = linear_rows(kv_tokens, nr, c, wt.wv, wt.bv, c);
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<size_t>(nr));
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < nr; ++j) {
        double s = 0.0;
        for (int64_t t = 0; t < d; ++t)
          s += q[static_cast<size_t>(i * c + hd * d + t)] *
               k[static_cast<size_t>(j * c + hd * d + t)];
        s /= std::sqrt(static_cast<double>(d));
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int64_t t = 0; t < d; ++t) {
        double acc = 0.0;
        for (int64_t j = 0; j < nr; ++j)
          acc += scores[static_cast<size_t>(j)] / z *
                 v[static_cast<size_t>(j * c + hd * d + t)];
        merged[static_cast<size_t>(i * c + hd * d + t)] = acc;
      }
    }
  }
  std::vector<double> out_tokens = linear_rows(merged, n, c, layer.wo.weight.data(),
                                               layer.wo.bias_.data(), c);
  std::vector<double> out(static_cast<size_t>(c * n));
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t p = 0; p < n; ++p)
      out[static_cast<size_t>(ci * n + p)] =
          out_tokens[static_cast<size_t>(p * c + ci)];
  return out;
}

// ---- metric reference pseudocode ------------------------------------------------

using Map = polyseg::metrics::Map2d;
constexpr double kMatlabEps = 2.220446049250313e-16;

inline std::pair<double, double> ref_dice_iou(const Map& pred, const Map& gt) {
  double tp = 0, sp = 0, sg = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    tp += pred.v[i] * gt.v[i];
    sp += pred.v[i];
    sg += gt.v[i];
  }
  double dice = (sp + sg) > 0 ? 2 * tp / (sp + sg) : 1.0;
  double iou = (sp + sg - tp) > 0 ? tp / (sp + sg - tp) : 1.0;
  return {dice, iou};
}

inline double ref_mae(const Map& pred, const Map& gt) {
  double s = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) s += std::abs(pred.v[i] - gt.v[i]);
  return s / static_cast<double>(pred.v.size());
}

inline double ref_weighted_fbeta(const Map& pred, const Map& gt) {
  const int64_t h = gt.h, w = gt.w, n = h * w;
  double gsum = 0;
  for (double v : gt.v) gsum += v;
  if (gsum == 0) return 0.0;

  std::vector<double> e(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    e[static_cast<size_t>(i)] =
        std::abs(pred.v[static_cast<size_t>(i)] - gt.v[static_cast<size_t>(i)]);

  // brute-force nearest-foreground lookup, ties by (distance^2, site index)
  std::vector<double> dst(static_cast<size_t>(n));
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      double best = std::numeric_limits<double>::infinity();
      int64_t best_i = -1;
      for (int64_t rr = 0; rr < h; ++rr)
        for (int64_t cc = 0; cc < w; ++cc) {
          if (gt.at(rr, cc) != 1.0) continue;
          double d =
              static_cast<double>((r - rr) * (r - rr) + (c - cc) * (c - cc));
          if (d < best || (d == best && rr * w + cc < best_i)) {
            best = d;
            best_i = rr * w + cc;
          }
        }
      dst[static_cast<size_t>(r * w + c)] = std::sqrt(best);
      idx[static_cast<size_t>(r * w + c)] = best_i;
    }

  std::vector<double> et(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    et[static_cast<size_t>(i)] = gt.v[static_cast<size_t>(i)] == 1.0
                                     ? e[static_cast<size_t>(i)]
                                     : e[static_cast<size_t>(idx[static_cast<size_t>(i)])];

  double kern[7][7], ks = 0;
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b) {
      kern[a][b] = std::exp(-((a - 3) * (a - 3) + (b - 3) * (b - 3)) / 50.0);
      ks += kern[a][b];
    }
  std::vector<double> ea(static_cast<size_t>(n), 0.0);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      double acc = 0;
      for (int a = 0; a < 7; ++a)
        for (int b = 0; b < 7; ++b) {
          int64_t rr = r + a - 3, cc = c + b - 3;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          acc += kern[a][b] / ks * et[static_cast<size_t>(rr * w + cc)];
        }
      ea[static_cast<size_t>(r * w + c)] = acc;
    }

  double tpw = gsum, fpw = 0, fg_err = 0;
  for (int64_t i = 0; i < n; ++i) {
    double m = e[static_cast<size_t>(i)];
    if (gt.v[static_cast<size_t>(i)] == 1.0) {
      if (ea[static_cast<size_t>(i)] < m) m = ea[static_cast<size_t>(i)];
      fg_err += m;  // importance weight is 1 on the object
    } else {
      double b = 2.0 - std::exp(std::log(0.5) / 5.0 * dst[static_cast<size_t>(i)]);
      fpw += m * b;
    }
  }
  tpw -= fg_err;
  double rec = 1.0 - fg_err / gsum;
  double prec = tpw / (kMatlabEps + tpw + fpw);
  return 2.0 * rec * prec / (kMatlabEps + rec + prec);
}

inline double ref_ssim_quadrant(const std::vector<double>& p,
                                const std::vector<double>& g) {
  if (p.empty()) return 1.0;
  double n = static_cast<double>(p.size());
  double x = 0, y = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    x += p[i];
    y += g[i];
  }
  x /= n;
  y /= n;
  double sx = 0, sy = 0, sxy = 0;
  if (p.size() > 1) {
    for (size_t i = 0; i < p.size(); ++i) {
      sx += (p[i] - x) * (p[i] - x);
      sy += (g[i] - y) * (g[i] - y);
      sxy += (p[i] - x) * (g[i] - y);
    }
    sx /= n - 1;
    sy /= n - 1;
    sxy /= n - 1;
  }
  double alpha = 4 * x * y * sxy;
  double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0) return alpha / (beta + kMatlabEps);
  return beta == 0 ? 1.0 : 0.0;
}

inline double ref_s_object_half(const Map& pred, const Map& gt, bool fg) {
  std::vector<double> vals;
  for (size_t i = 0; i < pred.v.size(); ++i)
    if ((gt.v[i] == 1.0) == fg) vals.push_back(fg ? pred.v[i] : 1.0 - pred.v[i]);
  if (vals.empty()) return 0.0;
  double x = 0;
  for (double v : vals) x += v;
  x /= static_cast<double>(vals.size());
  double sd = 0;
  if (vals.size() > 1) {
    for (double v : vals) sd += (v - x) * (v - x);
    sd = std::sqrt(sd / (static_cast<double>(vals.size()) - 1.0));
  }
  return 2 * x / (x * x + 1 + sd + kMatlabEps);
}

inline double ref_s_measure(const Map& pred, const Map& gt, double alpha = 0.5) {
  double mu = 0;
  for (double v : gt.v) mu += v;
  mu /= static_cast<double>(gt.v.size());
  if (mu == 0.0) {
    double m = 0;
    for (double v : pred.v) m += v;
    return 1.0 - m / static_cast<double>(pred.v.size());
  }
  if (mu == 1.0) {
    double m = 0;
    for (double v : pred.v) m += v;
    return m / static_cast<double>(pred.v.size());
  }
  double s_obj = mu * ref_s_object_half(pred, gt, true) +
                 (1 - mu) * ref_s_object_half(pred, gt, false);

  double area = mu * static_cast<double>(gt.numel());
  double cy = 0, cx = 0;
  for (int64_t r = 0; r < gt.h; ++r)
    for (int64_t c = 0; c < gt.w; ++c)
      if (gt.at(r, c) == 1.0) {
        cy += r;
        cx += c;
      }
  int64_t y = std::clamp<int64_t>(
      static_cast<int64_t>(std::llround(cy / area)) + 1, 1, gt.h);
  int64_t x = std::clamp<int64_t>(
      static_cast<int64_t>(std::llround(cx / area)) + 1, 1, gt.w);

  auto cut = [&](const Map& m, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
    std::vector<double> out;
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t c = c0; c < c1; ++c) out.push_back(m.at(r, c));
    return out;
  };
  double total = static_cast<double>(gt.numel());
  double w1 = static_cast<double>(y * x) / total;
  double w2 = static_cast<double>(y * (gt.w - x)) / total;
  double w3 = static_cast<double>((gt.h - y) * x) / total;
  double w4 = 1 - w1 - w2 - w3;
  double s_reg =
      w1 * ref_ssim_quadrant(cut(pred, 0, y, 0, x), cut(gt, 0, y, 0, x)) +
      w2 * ref_ssim_quadrant(cut(pred, 0, y, x, gt.w), cut(gt, 0, y, x, gt.w)) +
      w3 * ref_ssim_quadrant(cut(pred, y, gt.h, 0, x), cut(gt, y, gt.h, 0, x)) +
      w4 * ref_ssim_quadrant(cut(pred, y, gt.h, x, gt.w), cut(gt, y, gt.h, x, gt.w));
  return std::max(0.0, alpha * s_obj + (1 - alpha) * s_reg);
}

inline std::pair<double, double> ref_e_measure(const Map& pred, const Map& gt) {
  double n = static_cast<double>(gt.numel());
  double gsum = 0;
  for (double v : gt.v) gsum += v;
  double total = 0, best = 0;
  for (int t = 0; t < 256; ++t) {
    double thr = t / 255.0;
    double score = 0;
    if (gsum == 0) {
      for (double v : pred.v) score += (v >= thr ? 0.0 : 1.0);
    } else if (gsum == n) {
      for (double v : pred.v) score += (v >= thr ? 1.0 : 0.0);
    } else {
      double mu_f = 0;
      for (double v : pred.v) mu_f += (v >= thr ? 1.0 : 0.0);
      mu_f /= n;
      double mu_g = gsum / n;
      for (size_t i = 0; i < pred.v.size(); ++i) {
        double df = (pred.v[i] >= thr ? 1.0 : 0.0) - mu_f;
        double dg = gt.v[i] - mu_g;
        double align = 2 * dg * df / (dg * dg + df * df + kMatlabEps);
        score += (align + 1) * (align + 1) / 4.0;
      }
    }
    score /= n;
    total += score;
    best = std::max(best, score);
  }
  return {total / 256.0, best};
}

}  // namespace oracle
