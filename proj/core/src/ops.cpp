#include "polyseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace polyseg::ops {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

std::vector<double>* grad_of(const std::shared_ptr<Node>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void check_rank(const Tensor& a, int r, const char* op) {
  if (a.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(r) + ", got " +
                                shape_str(a.shape()));
}

// Elementwise op with derivative computed from (input value, output value).
template <class F, class DF>
Tensor unary_ew(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
  return detail::make_result(
      a.shape(), std::move(out), {a}, [df](Node& self) {
        auto* ga = grad_of(self.parents[0]);
        if (!ga) return;
        const auto& x = self.parents[0]->value;
        for (size_t i = 0; i < x.size(); ++i)
          (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
      });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k)
      if (auto* g = grad_of(self.parents[k]))
        for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    if (auto* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
  });
}

Tensor neg(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_ew(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_ew(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor abs_val(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary_ew(
      a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation, matching the common transformer formulation
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return unary_ew(
      a,
      [](double x) {
        double t = std::tanh(kC * (x + 0.044715 * x * x * x));
        return 0.5 * x * (1.0 + t);
      },
      [](double x, double) {
        double u = kC * (x + 0.044715 * x * x * x);
        double t = std::tanh(u);
        double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_ew(
      a,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_t(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor log1p_t(const Tensor& a) {
  return unary_ew(
      a, [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary_ew(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_ew(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor mul_scalar_t(const Tensor& s, const Tensor& x) {
  if (s.numel() != 1)
    throw std::invalid_argument("mul_scalar_t: scale must have one element");
  double sv = s.data()[0];
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = sv * x.data()[i];
  return detail::make_result(x.shape(), std::move(out), {s, x}, [](Node& self) {
    double sv = self.parents[0]->value[0];
    const auto& xv = self.parents[1]->value;
    if (auto* gs = grad_of(self.parents[0])) {
      double acc = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xv[i];
      (*gs)[0] += acc;
    }
    if (auto* gx = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * sv;
  });
}

// ------------------------------------------------------- reductions & shaping

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s}, {a}, [](Node& self) {
    if (auto* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s / n}, {a}, [n](Node& self) {
    if (auto* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] / n;
  });
}

Tensor sum_per_sample(const Tensor& a) {
  if (a.rank() < 2)
    throw std::invalid_argument("sum_per_sample: rank must be >= 2");
  int64_t b = a.dim(0);
  int64_t inner = a.numel() / b;
  std::vector<double> out(static_cast<size_t>(b), 0.0);
  for (int64_t i = 0; i < b; ++i) {
    double s = 0.0;
    const double* p = a.data().data() + i * inner;
    for (int64_t j = 0; j < inner; ++j) s += p[j];
    out[static_cast<size_t>(i)] = s;
  }
  return detail::make_result({b}, std::move(out), {a}, [b, inner](Node& self) {
    if (auto* g = grad_of(self.parents[0]))
      for (int64_t i = 0; i < b; ++i) {
        double gv = self.grad[static_cast<size_t>(i)];
        double* p = g->data() + i * inner;
        for (int64_t j = 0; j < inner; ++j) p[j] += gv;
      }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(a.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> out = a.data();
  return detail::make_result(std::move(shape), std::move(out), {a},
                             [](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   (*g)[i] += self.grad[i];
                             });
}

Tensor to_tokens(const Tensor& x) {
  check_rank(x, 4, "to_tokens");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t n = h * w;
  std::vector<double> out(static_cast<size_t>(b * n * c));
  const double* src = x.data().data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* sp = src + (bi * c + ci) * n;
      double* dp = out.data() + bi * n * c + ci;
      for (int64_t p = 0; p < n; ++p) dp[p * c] = sp[p];
    }
  return detail::make_result({b, n, c}, std::move(out), {x},
                             [b, c, n](Node& self) {
                               auto* g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (int64_t bi = 0; bi < b; ++bi)
                                 for (int64_t ci = 0; ci < c; ++ci) {
                                   double* sp = g->data() + (bi * c + ci) * n;
                                   const double* dp =
                                       self.grad.data() + bi * n * c + ci;
                                   for (int64_t p = 0; p < n; ++p)
                                     sp[p] += dp[p * c];
                                 }
                             });
}

Tensor from_tokens(const Tensor& t, int64_t h, int64_t w) {
  check_rank(t, 3, "from_tokens");
  int64_t b = t.dim(0), n = t.dim(1), c = t.dim(2);
  if (n != h * w)
    throw std::invalid_argument("from_tokens: token count " +
                                std::to_string(n) + " != " +
                                std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> out(static_cast<size_t>(b * c * n));
  const double* src = t.data().data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      double* dp = out.data() + (bi * c + ci) * n;
      const double* sp = src + bi * n * c + ci;
      for (int64_t p = 0; p < n; ++p) dp[p] = sp[p * c];
    }
  return detail::make_result({b, c, h, w}, std::move(out), {t},
                             [b, c, n](Node& self) {
                               auto* g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (int64_t bi = 0; bi < b; ++bi)
                                 for (int64_t ci = 0; ci < c; ++ci) {
                                   const double* dp =
                                       self.grad.data() + (bi * c + ci) * n;
                                   double* sp = g->data() + bi * n * c + ci;
                                   for (int64_t p = 0; p < n; ++p)
                                     sp[p * c] += dp[p];
                                 }
                             });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2)
    throw std::invalid_argument("transpose_last2: rank must be >= 2");
  Shape s = a.shape();
  int64_t m = s[s.size() - 2], n = s[s.size() - 1];
  int64_t outer = a.numel() / (m * n);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<double> out(a.data().size());
  for (int64_t o = 0; o < outer; ++o) {
    const double* sp = a.data().data() + o * m * n;
    double* dp = out.data() + o * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dp[j * m + i] = sp[i * n + j];
  }
  return detail::make_result(std::move(s), std::move(out), {a},
                             [outer, m, n](Node& self) {
                               auto* g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (int64_t o = 0; o < outer; ++o) {
                                 double* sp = g->data() + o * m * n;
                                 const double* dp = self.grad.data() + o * m * n;
                                 for (int64_t i = 0; i < m; ++i)
                                   for (int64_t j = 0; j < n; ++j)
                                     sp[i * n + j] += dp[j * m + i];
                               }
                             });
}

Tensor slice_lastdim(const Tensor& a, int64_t c0, int64_t c1) {
  int64_t c = a.shape().back();
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw std::invalid_argument("slice_lastdim: bad range");
  int64_t rows = a.numel() / c;
  int64_t cw = c1 - c0;
  Shape s = a.shape();
  s.back() = cw;
  std::vector<double> out(static_cast<size_t>(rows * cw));
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + r * c + c0, cw, out.data() + r * cw);
  return detail::make_result(std::move(s), std::move(out), {a},
                             [rows, c, c0, cw](Node& self) {
                               auto* g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (int64_t r = 0; r < rows; ++r)
                                 for (int64_t j = 0; j < cw; ++j)
                                   (*g)[r * c + c0 + j] += self.grad[r * cw + j];
                             });
}

Tensor concat_lastdim(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat_lastdim: empty input");
  Shape lead = ts[0].shape();
  lead.pop_back();
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const auto& t : ts) {
    Shape l = t.shape();
    int64_t w = l.back();
    l.pop_back();
    if (l != lead)
      throw std::invalid_argument("concat_lastdim: leading dims differ");
    widths.push_back(w);
    total += w;
  }
  int64_t rows = shape_numel(lead);
  Shape s = lead;
  s.push_back(total);
  std::vector<double> out(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (size_t k = 0; k < ts.size(); ++k) {
    int64_t w = widths[k];
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(ts[k].data().data() + r * w, w, out.data() + r * total + off);
    off += w;
  }
  return detail::make_result(
      std::move(s), std::move(out), ts, [rows, widths, total](Node& self) {
        int64_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
          int64_t w = widths[k];
          if (auto* g = grad_of(self.parents[k]))
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t j = 0; j < w; ++j)
                (*g)[r * w + j] += self.grad[r * total + off + j];
          off += w;
        }
      });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank(a, 4, "concat_channels");
  check_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  int64_t bs = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> out(static_cast<size_t>(bs * (ca + cb) * hw));
  for (int64_t bi = 0; bi < bs; ++bi) {
    std::copy_n(a.data().data() + bi * ca * hw, ca * hw,
                out.data() + bi * (ca + cb) * hw);
    std::copy_n(b.data().data() + bi * cb * hw, cb * hw,
                out.data() + bi * (ca + cb) * hw + ca * hw);
  }
  return detail::make_result(
      {bs, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
      [bs, ca, cb, hw](Node& self) {
        if (auto* g = grad_of(self.parents[0]))
          for (int64_t bi = 0; bi < bs; ++bi)
            for (int64_t i = 0; i < ca * hw; ++i)
              (*g)[bi * ca * hw + i] += self.grad[bi * (ca + cb) * hw + i];
        if (auto* g = grad_of(self.parents[1]))
          for (int64_t bi = 0; bi < bs; ++bi)
            for (int64_t i = 0; i < cb * hw; ++i)
              (*g)[bi * cb * hw + i] +=
                  self.grad[bi * (ca + cb) * hw + ca * hw + i];
      });
}

Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
  check_rank(a, 4, "slice_channels");
  int64_t bs = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw std::invalid_argument("slice_channels: bad range");
  int64_t cw = c1 - c0;
  std::vector<double> out(static_cast<size_t>(bs * cw * hw));
  for (int64_t bi = 0; bi < bs; ++bi)
    std::copy_n(a.data().data() + (bi * c + c0) * hw, cw * hw,
                out.data() + bi * cw * hw);
  return detail::make_result(
      {bs, cw, a.dim(2), a.dim(3)}, std::move(out), {a},
      [bs, c, c0, cw, hw](Node& self) {
        if (auto* g = grad_of(self.parents[0]))
          for (int64_t bi = 0; bi < bs; ++bi)
            for (int64_t i = 0; i < cw * hw; ++i)
              (*g)[(bi * c + c0) * hw + i] += self.grad[bi * cw * hw + i];
      });
}

// ------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n));
  CMapM am(a.data().data(), m, k), bm(b.data().data(), k, n);
  MapM om(out.data(), m, n);
  om.noalias() = am * bm;
  return detail::make_result({m, n}, std::move(out), {a, b},
                             [m, k, n](Node& self) {
                               CMapM gm(self.grad.data(), m, n);
                               CMapM am(self.parents[0]->value.data(), m, k);
                               CMapM bm(self.parents[1]->value.data(), k, n);
                               if (auto* g = grad_of(self.parents[0])) {
                                 MapM ga(g->data(), m, k);
                                 ga.noalias() += gm * bm.transpose();
                               }
                               if (auto* g = grad_of(self.parents[1])) {
                                 MapM gb(g->data(), k, n);
                                 gb.noalias() += am.transpose() * gm;
                               }
                             });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  check_rank(a, 3, "bmm");
  check_rank(b, 3, "bmm");
  int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != bs || b.dim(1) != k)
    throw std::invalid_argument("bmm: shape mismatch " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i) {
    CMapM am(a.data().data() + i * m * k, m, k);
    CMapM bm(b.data().data() + i * k * n, k, n);
    MapM om(out.data() + i * m * n, m, n);
    om.noalias() = am * bm;
  }
  return detail::make_result(
      {bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](Node& self) {
        for (int64_t i = 0; i < bs; ++i) {
          CMapM gm(self.grad.data() + i * m * n, m, n);
          CMapM am(self.parents[0]->value.data() + i * m * k, m, k);
          CMapM bm(self.parents[1]->value.data() + i * k * n, k, n);
          if (auto* g = grad_of(self.parents[0])) {
            MapM ga(g->data() + i * m * k, m, k);
            ga.noalias() += gm * bm.transpose();
          }
          if (auto* g = grad_of(self.parents[1])) {
            MapM gb(g->data() + i * k * n, k, n);
            gb.noalias() += am.transpose() * gm;
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank(w, 2, "linear");
  int64_t cin = x.shape().back();
  if (w.dim(1) != cin)
    throw std::invalid_argument("linear: weight " + shape_str(w.shape()) +
                                " does not accept input " +
                                shape_str(x.shape()));
  int64_t cout = w.dim(0);
  if (b.defined() && b.numel() != cout)
    throw std::invalid_argument("linear: bias size mismatch");
  int64_t rows = x.numel() / cin;
  Shape s = x.shape();
  s.back() = cout;
  std::vector<double> out(static_cast<size_t>(rows * cout));
  {
    CMapM xm(x.data().data(), rows, cin), wm(w.data().data(), cout, cin);
    MapM om(out.data(), rows, cout);
    om.noalias() = xm * wm.transpose();
    if (b.defined())
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cout; ++c) out[r * cout + c] += b.data()[c];
  }
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return detail::make_result(
      std::move(s), std::move(out), std::move(parents),
      [rows, cin, cout](Node& self) {
        CMapM gm(self.grad.data(), rows, cout);
        CMapM xm(self.parents[0]->value.data(), rows, cin);
        CMapM wm(self.parents[1]->value.data(), cout, cin);
        if (auto* g = grad_of(self.parents[0])) {
          MapM gx(g->data(), rows, cin);
          gx.noalias() += gm * wm;
        }
        if (auto* g = grad_of(self.parents[1])) {
          MapM gw(g->data(), cout, cin);
          gw.noalias() += gm.transpose() * xm;
        }
        if (self.parents.size() > 2)
          if (auto* g = grad_of(self.parents[2]))
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t c = 0; c < cout; ++c)
                (*g)[c] += self.grad[r * cout + c];
      });
}

Tensor outer_bc(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "outer_bc");
  check_rank(b, 2, "outer_bc");
  if (a.dim(0) != b.dim(0))
    throw std::invalid_argument("outer_bc: batch mismatch");
  int64_t bs = a.dim(0), m = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(bs * m * n));
  for (int64_t bi = 0; bi < bs; ++bi)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[(bi * m + i) * n + j] = a.data()[bi * m + i] * b.data()[bi * n + j];
  return detail::make_result(
      {bs, m, n}, std::move(out), {a, b}, [bs, m, n](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (auto* g = grad_of(self.parents[0]))
          for (int64_t bi = 0; bi < bs; ++bi)
            for (int64_t i = 0; i < m; ++i) {
              double acc = 0.0;
              for (int64_t j = 0; j < n; ++j)
                acc += self.grad[(bi * m + i) * n + j] * bv[bi * n + j];
              (*g)[bi * m + i] += acc;
            }
        if (auto* g = grad_of(self.parents[1]))
          for (int64_t bi = 0; bi < bs; ++bi)
            for (int64_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (int64_t i = 0; i < m; ++i)
                acc += self.grad[(bi * m + i) * n + j] * av[bi * m + i];
              (*g)[bi * n + j] += acc;
            }
      });
}

Tensor softmax_lastdim(const Tensor& a) {
  int64_t n = a.shape().back();
  int64_t rows = a.numel() / n;
  std::vector<double> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    double m = x[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - m);
      s += y[i];
    }
    for (int64_t i = 0; i < n; ++i) y[i] /= s;
  }
  return detail::make_result(a.shape(), std::move(out), {a},
                             [rows, n](Node& self) {
                               auto* g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (int64_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * n;
                                 const double* gy = self.grad.data() + r * n;
                                 double dot = 0.0;
                                 for (int64_t i = 0; i < n; ++i)
                                   dot += y[i] * gy[i];
                                 double* gx = g->data() + r * n;
                                 for (int64_t i = 0; i < n; ++i)
                                   gx[i] += y[i] * (gy[i] - dot);
                               }
                             });
}

// --------------------------------------------------- convolution & normalizers

namespace {

struct ConvDims {
  int64_t b, cin, h, w, cout, cing, kh, kw, ho, wo;
  int stride, pad, groups;
};

void im2col(const double* x, const ConvDims& d, int64_t g, double* col) {
  // col is [cing*kh*kw, ho*wo] for channels of group g
  const int64_t hw = d.h * d.w;
  for (int64_t c = 0; c < d.cing; ++c) {
    const double* xc = x + (g * d.cing + c) * hw;
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * (d.ho * d.wo);
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(row + oy * d.wo, d.wo, 0.0);
            continue;
          }
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride - d.pad + kj;
            row[oy * d.wo + ox] = (ix >= 0 && ix < d.w) ? xc[iy * d.w + ix] : 0.0;
          }
        }
      }
  }
}

void col2im_acc(const double* col, const ConvDims& d, int64_t g, double* gx) {
  const int64_t hw = d.h * d.w;
  for (int64_t c = 0; c < d.cing; ++c) {
    double* xc = gx + (g * d.cing + c) * hw;
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * (d.ho * d.wo);
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride - d.pad + kj;
            if (ix >= 0 && ix < d.w) xc[iy * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad, int groups) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  ConvDims d;
  d.b = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.cing = w.dim(1);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.groups = groups;
  if (d.cin != d.cing * groups || d.cout % groups != 0)
    throw std::invalid_argument("conv2d: channel/group mismatch, x=" +
                                shape_str(x.shape()) + " w=" +
                                shape_str(w.shape()) + " groups=" +
                                std::to_string(groups));
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0)
    throw std::invalid_argument("conv2d: output would be empty for input " +
                                shape_str(x.shape()));
  const int64_t coutg = d.cout / groups;
  const int64_t krows = d.cing * d.kh * d.kw;
  const int64_t ocols = d.ho * d.wo;
  std::vector<double> out(static_cast<size_t>(d.b * d.cout * ocols), 0.0);
  std::vector<double> col(static_cast<size_t>(krows * ocols));
  for (int64_t bi = 0; bi < d.b; ++bi) {
    const double* xb = x.data().data() + bi * d.cin * d.h * d.w;
    for (int g = 0; g < groups; ++g) {
      im2col(xb, d, g, col.data());
      CMapM wm(w.data().data() + g * coutg * krows, coutg, krows);
      CMapM cm(col.data(), krows, ocols);
      MapM om(out.data() + (bi * d.cout + g * coutg) * ocols, coutg, ocols);
      om.noalias() = wm * cm;
    }
    if (b.defined())
      for (int64_t c = 0; c < d.cout; ++c) {
        double bv = b.data()[c];
        double* op = out.data() + (bi * d.cout + c) * ocols;
        for (int64_t i = 0; i < ocols; ++i) op[i] += bv;
      }
  }
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return detail::make_result(
      {d.b, d.cout, d.ho, d.wo}, std::move(out), std::move(parents),
      [d, coutg, krows, ocols](Node& self) {
        auto* gx = grad_of(self.parents[0]);
        auto* gw = grad_of(self.parents[1]);
        std::vector<double>* gb = self.parents.size() > 2
                                      ? grad_of(self.parents[2])
                                      : nullptr;
        std::vector<double> col(static_cast<size_t>(krows * ocols));
        std::vector<double> gcol(static_cast<size_t>(krows * ocols));
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        for (int64_t bi = 0; bi < d.b; ++bi) {
          const double* xb = xv.data() + bi * d.cin * d.h * d.w;
          for (int g = 0; g < d.groups; ++g) {
            CMapM gm(self.grad.data() + (bi * d.cout + g * coutg) * ocols,
                     coutg, ocols);
            if (gw) {
              im2col(xb, d, g, col.data());
              CMapM cm(col.data(), krows, ocols);
              MapM gwm(gw->data() + g * coutg * krows, coutg, krows);
              gwm.noalias() += gm * cm.transpose();
            }
            if (gx) {
              CMapM wm(wv.data() + g * coutg * krows, coutg, krows);
              MapM gcm(gcol.data(), krows, ocols);
              gcm.noalias() = wm.transpose() * gm;
              col2im_acc(gcol.data(), d, g,
                         gx->data() + bi * d.cin * d.h * d.w);
            }
          }
          if (gb)
            for (int64_t c = 0; c < d.cout; ++c) {
              const double* gp = self.grad.data() + (bi * d.cout + c) * ocols;
              double acc = 0.0;
              for (int64_t i = 0; i < ocols; ++i) acc += gp[i];
              (*gb)[c] += acc;
            }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor running_mean, Tensor running_var, bool training,
                   double momentum, double eps) {
  check_rank(x, 4, "batchnorm2d");
  int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  int64_t n = b * hw;
  std::vector<double> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
  if (training) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double m = 0.0;
      for (int64_t bi = 0; bi < b; ++bi) {
        const double* p = x.data().data() + (bi * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) m += p[i];
      }
      m /= static_cast<double>(n);
      double v = 0.0;
      for (int64_t bi = 0; bi < b; ++bi) {
        const double* p = x.data().data() + (bi * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<double>(n);
      mean[static_cast<size_t>(ci)] = m;
      invstd[static_cast<size_t>(ci)] = 1.0 / std::sqrt(v + eps);
      double unbiased = n > 1 ? v * static_cast<double>(n) / (n - 1) : v;
      running_mean.data()[ci] = (1 - momentum) * running_mean.data()[ci] + momentum * m;
      running_var.data()[ci] = (1 - momentum) * running_var.data()[ci] + momentum * unbiased;
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      mean[static_cast<size_t>(ci)] = running_mean.data()[ci];
      invstd[static_cast<size_t>(ci)] =
          1.0 / std::sqrt(running_var.data()[ci] + eps);
    }
  }
  std::vector<double> out(x.data().size());
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* p = x.data().data() + (bi * c + ci) * hw;
      double* o = out.data() + (bi * c + ci) * hw;
      double m = mean[static_cast<size_t>(ci)], is = invstd[static_cast<size_t>(ci)];
      double g = gamma.data()[ci], bt = beta.data()[ci];
      for (int64_t i = 0; i < hw; ++i) o[i] = g * (p[i] - m) * is + bt;
    }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [b, c, hw, n, mean, invstd, training](Node& self) {
        auto* gx = grad_of(self.parents[0]);
        auto* gg = grad_of(self.parents[1]);
        auto* gb = grad_of(self.parents[2]);
        const auto& xv = self.parents[0]->value;
        const auto& gam = self.parents[1]->value;
        for (int64_t ci = 0; ci < c; ++ci) {
          double m = mean[static_cast<size_t>(ci)];
          double is = invstd[static_cast<size_t>(ci)];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int64_t bi = 0; bi < b; ++bi) {
            const double* gp = self.grad.data() + (bi * c + ci) * hw;
            const double* p = xv.data() + (bi * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * (p[i] - m) * is;
            }
          }
          if (gg) (*gg)[ci] += sum_gx;
          if (gb) (*gb)[ci] += sum_g;
          if (gx) {
            double gc = gam[ci];
            if (training) {
              double mg = sum_g / static_cast<double>(n);
              double mgx = sum_gx / static_cast<double>(n);
              for (int64_t bi = 0; bi < b; ++bi) {
                const double* gp = self.grad.data() + (bi * c + ci) * hw;
                const double* p = xv.data() + (bi * c + ci) * hw;
                double* go = gx->data() + (bi * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                  double xhat = (p[i] - m) * is;
                  go[i] += gc * is * (gp[i] - mg - xhat * mgx);
                }
              }
            } else {
              for (int64_t bi = 0; bi < b; ++bi) {
                const double* gp = self.grad.data() + (bi * c + ci) * hw;
                double* go = gx->data() + (bi * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) go[i] += gc * is * gp[i];
              }
            }
          }
        }
      });
}

Tensor layernorm_channels(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, double eps) {
  check_rank(x, 4, "layernorm_channels");
  int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.data().size());
  std::vector<double> mean(static_cast<size_t>(b * hw)), invstd(static_cast<size_t>(b * hw));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t p = 0; p < hw; ++p) {
      double m = 0.0;
      for (int64_t ci = 0; ci < c; ++ci) m += x.data()[(bi * c + ci) * hw + p];
      m /= static_cast<double>(c);
      double v = 0.0;
      for (int64_t ci = 0; ci < c; ++ci) {
        double d = x.data()[(bi * c + ci) * hw + p] - m;
        v += d * d;
      }
      v /= static_cast<double>(c);
      double is = 1.0 / std::sqrt(v + eps);
      mean[static_cast<size_t>(bi * hw + p)] = m;
      invstd[static_cast<size_t>(bi * hw + p)] = is;
      for (int64_t ci = 0; ci < c; ++ci)
        out[(bi * c + ci) * hw + p] =
            gamma.data()[ci] * (x.data()[(bi * c + ci) * hw + p] - m) * is +
            beta.data()[ci];
    }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [b, c, hw, mean, invstd](Node& self) {
        auto* gx = grad_of(self.parents[0]);
        auto* gg = grad_of(self.parents[1]);
        auto* gb = grad_of(self.parents[2]);
        const auto& xv = self.parents[0]->value;
        const auto& gam = self.parents[1]->value;
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t p = 0; p < hw; ++p) {
            double m = mean[static_cast<size_t>(bi * hw + p)];
            double is = invstd[static_cast<size_t>(bi * hw + p)];
            double sum_d = 0.0, sum_dx = 0.0;
            for (int64_t ci = 0; ci < c; ++ci) {
              double gp = self.grad[(bi * c + ci) * hw + p];
              double xhat = (xv[(bi * c + ci) * hw + p] - m) * is;
              if (gg) (*gg)[ci] += gp * xhat;
              if (gb) (*gb)[ci] += gp;
              double d = gp * gam[ci];
              sum_d += d;
              sum_dx += d * xhat;
            }
            if (gx) {
              double mg = sum_d / static_cast<double>(c);
              double mgx = sum_dx / static_cast<double>(c);
              for (int64_t ci = 0; ci < c; ++ci) {
                double gp = self.grad[(bi * c + ci) * hw + p] * gam[ci];
                double xhat = (xv[(bi * c + ci) * hw + p] - m) * is;
                (*gx)[(bi * c + ci) * hw + p] += is * (gp - mg - xhat * mgx);
              }
            }
          }
      });
}

// ------------------------------------------------------- resampling & pooling

Tensor upsample_bilinear(const Tensor& x, int64_t oh, int64_t ow) {
  check_rank(x, 4, "upsample_bilinear");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (oh == h && ow == w) {
    // still a graph node so wiring stays uniform
    return scale(x, 1.0);
  }
  double sy = static_cast<double>(h) / static_cast<double>(oh);
  double sx = static_cast<double>(w) / static_cast<double>(ow);
  // precomputed per-axis neighbor indices and weights
  std::vector<int64_t> y0(static_cast<size_t>(oh)), y1(static_cast<size_t>(oh));
  std::vector<double> wy(static_cast<size_t>(oh));
  for (int64_t i = 0; i < oh; ++i) {
    double src = std::max(0.0, (static_cast<double>(i) + 0.5) * sy - 0.5);
    int64_t i0 = std::min(static_cast<int64_t>(src), h - 1);
    y0[static_cast<size_t>(i)] = i0;
    y1[static_cast<size_t>(i)] = std::min(i0 + 1, h - 1);
    wy[static_cast<size_t>(i)] = src - static_cast<double>(i0);
  }
  std::vector<int64_t> x0(static_cast<size_t>(ow)), x1(static_cast<size_t>(ow));
  std::vector<double> wx(static_cast<size_t>(ow));
  for (int64_t j = 0; j < ow; ++j) {
    double src = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
    int64_t j0 = std::min(static_cast<int64_t>(src), w - 1);
    x0[static_cast<size_t>(j)] = j0;
    x1[static_cast<size_t>(j)] = std::min(j0 + 1, w - 1);
    wx[static_cast<size_t>(j)] = src - static_cast<double>(j0);
  }
  std::vector<double> out(static_cast<size_t>(b * c * oh * ow));
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* src = x.data().data() + bc * h * w;
    double* dst = out.data() + bc * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      double fy = wy[static_cast<size_t>(i)];
      const double* r0 = src + y0[static_cast<size_t>(i)] * w;
      const double* r1 = src + y1[static_cast<size_t>(i)] * w;
      for (int64_t j = 0; j < ow; ++j) {
        double fx = wx[static_cast<size_t>(j)];
        int64_t a = x0[static_cast<size_t>(j)], bb = x1[static_cast<size_t>(j)];
        dst[i * ow + j] = (1 - fy) * ((1 - fx) * r0[a] + fx * r0[bb]) +
                          fy * ((1 - fx) * r1[a] + fx * r1[bb]);
      }
    }
  }
  return detail::make_result(
      {b, c, oh, ow}, std::move(out), {x},
      [b, c, h, w, oh, ow, y0, y1, wy, x0, x1, wx](Node& self) {
        auto* g = grad_of(self.parents[0]);
        if (!g) return;
        for (int64_t bc = 0; bc < b * c; ++bc) {
          double* gsrc = g->data() + bc * h * w;
          const double* gdst = self.grad.data() + bc * oh * ow;
          for (int64_t i = 0; i < oh; ++i) {
            double fy = wy[static_cast<size_t>(i)];
            int64_t i0 = y0[static_cast<size_t>(i)], i1 = y1[static_cast<size_t>(i)];
            for (int64_t j = 0; j < ow; ++j) {
              double fx = wx[static_cast<size_t>(j)];
              int64_t j0 = x0[static_cast<size_t>(j)], j1 = x1[static_cast<size_t>(j)];
              double gv = gdst[i * ow + j];
              gsrc[i0 * w + j0] += (1 - fy) * (1 - fx) * gv;
              gsrc[i0 * w + j1] += (1 - fy) * fx * gv;
              gsrc[i1 * w + j0] += fy * (1 - fx) * gv;
              gsrc[i1 * w + j1] += fy * fx * gv;
            }
          }
        }
      });
}

Tensor avg_pool2d(const Tensor& x, int k, int stride, int pad,
                  bool count_include_pad) {
  check_rank(x, 4, "avg_pool2d");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t oh = (h + 2 * pad - k) / stride + 1;
  int64_t ow = (w + 2 * pad - k) / stride + 1;
  auto window_inv = [=](int64_t oy, int64_t ox) {
    if (count_include_pad) return 1.0 / (static_cast<double>(k) * k);
    int64_t y0 = std::max<int64_t>(0, oy * stride - pad);
    int64_t y1 = std::min<int64_t>(h, oy * stride - pad + k);
    int64_t x0 = std::max<int64_t>(0, ox * stride - pad);
    int64_t x1 = std::min<int64_t>(w, ox * stride - pad + k);
    return 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
  };
  std::vector<double> out(static_cast<size_t>(b * c * oh * ow), 0.0);
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* src = x.data().data() + bc * h * w;
    double* dst = out.data() + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int ki = 0; ki < k; ++ki) {
          int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < k; ++kj) {
            int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) s += src[iy * w + ix];
          }
        }
        dst[oy * ow + ox] = s * window_inv(oy, ox);
      }
  }
  return detail::make_result(
      {b, c, oh, ow}, std::move(out), {x},
      [b, c, h, w, oh, ow, k, stride, pad, window_inv](Node& self) {
        auto* g = grad_of(self.parents[0]);
        if (!g) return;
        for (int64_t bc = 0; bc < b * c; ++bc) {
          double* gsrc = g->data() + bc * h * w;
          const double* gdst = self.grad.data() + bc * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
              double gv = gdst[oy * ow + ox] * window_inv(oy, ox);
              for (int ki = 0; ki < k; ++ki) {
                int64_t iy = oy * stride - pad + ki;
                if (iy < 0 || iy >= h) continue;
                for (int kj = 0; kj < k; ++kj) {
                  int64_t ix = ox * stride - pad + kj;
                  if (ix >= 0 && ix < w) gsrc[iy * w + ix] += gv;
                }
              }
            }
        }
      });
}

Tensor adaptive_avg_pool2d(const Tensor& x, int64_t oh, int64_t ow) {
  check_rank(x, 4, "adaptive_avg_pool2d");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto start = [](int64_t o, int64_t in, int64_t out) {
    return (o * in) / out;
  };
  auto end = [](int64_t o, int64_t in, int64_t out) {
    return ((o + 1) * in + out - 1) / out;
  };
  std::vector<double> out(static_cast<size_t>(b * c * oh * ow));
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* src = x.data().data() + bc * h * w;
    double* dst = out.data() + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      int64_t ys = start(oy, h, oh), ye = end(oy, h, oh);
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t xs = start(ox, w, ow), xe = end(ox, w, ow);
        double s = 0.0;
        for (int64_t iy = ys; iy < ye; ++iy)
          for (int64_t ix = xs; ix < xe; ++ix) s += src[iy * w + ix];
        dst[oy * ow + ox] = s / (static_cast<double>(ye - ys) * (xe - xs));
      }
    }
  }
  return detail::make_result(
      {b, c, oh, ow}, std::move(out), {x},
      [b, c, h, w, oh, ow, start, end](Node& self) {
        auto* g = grad_of(self.parents[0]);
        if (!g) return;
        for (int64_t bc = 0; bc < b * c; ++bc) {
          double* gsrc = g->data() + bc * h * w;
          const double* gdst = self.grad.data() + bc * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy) {
            int64_t ys = start(oy, h, oh), ye = end(oy, h, oh);
            for (int64_t ox = 0; ox < ow; ++ox) {
              int64_t xs = start(ox, w, ow), xe = end(ox, w, ow);
              double gv = gdst[oy * ow + ox] /
                          (static_cast<double>(ye - ys) * (xe - xs));
              for (int64_t iy = ys; iy < ye; ++iy)
                for (int64_t ix = xs; ix < xe; ++ix) gsrc[iy * w + ix] += gv;
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank(x, 4, "global_avg_pool");
  int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(b * c));
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* p = x.data().data() + bc * hw;
    double s = 0.0;
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[static_cast<size_t>(bc)] = s / static_cast<double>(hw);
  }
  return detail::make_result({b, c}, std::move(out), {x}, [b, c, hw](Node& self) {
    if (auto* g = grad_of(self.parents[0]))
      for (int64_t bc = 0; bc < b * c; ++bc) {
        double gv = self.grad[static_cast<size_t>(bc)] / static_cast<double>(hw);
        double* p = g->data() + bc * hw;
        for (int64_t i = 0; i < hw; ++i) p[i] += gv;
      }
  });
}

Tensor mean_over_w(const Tensor& x) {
  check_rank(x, 4, "mean_over_w");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(b * c * h));
  for (int64_t bch = 0; bch < b * c * h; ++bch) {
    const double* p = x.data().data() + bch * w;
    double s = 0.0;
    for (int64_t i = 0; i < w; ++i) s += p[i];
    out[static_cast<size_t>(bch)] = s / static_cast<double>(w);
  }
  return detail::make_result({b, c, h, 1}, std::move(out), {x},
                             [b, c, h, w](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (int64_t bch = 0; bch < b * c * h; ++bch) {
                                   double gv = self.grad[static_cast<size_t>(bch)] /
                                               static_cast<double>(w);
                                   double* p = g->data() + bch * w;
                                   for (int64_t i = 0; i < w; ++i) p[i] += gv;
                                 }
                             });
}

Tensor mean_over_h(const Tensor& x) {
  check_rank(x, 4, "mean_over_h");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(b * c * w), 0.0);
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* p = x.data().data() + bc * h * w;
    double* o = out.data() + bc * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) o[j] += p[i * w + j];
    for (int64_t j = 0; j < w; ++j) o[j] /= static_cast<double>(h);
  }
  return detail::make_result({b, c, 1, w}, std::move(out), {x},
                             [b, c, h, w](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (int64_t bc = 0; bc < b * c; ++bc) {
                                   double* p = g->data() + bc * h * w;
                                   const double* go = self.grad.data() + bc * w;
                                   for (int64_t i = 0; i < h; ++i)
                                     for (int64_t j = 0; j < w; ++j)
                                       p[i * w + j] += go[j] / static_cast<double>(h);
                                 }
                             });
}

Tensor broadcast_w(const Tensor& x, int64_t w) {
  check_rank(x, 4, "broadcast_w");
  if (x.dim(3) != 1) throw std::invalid_argument("broadcast_w: width must be 1");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2);
  std::vector<double> out(static_cast<size_t>(b * c * h * w));
  for (int64_t bch = 0; bch < b * c * h; ++bch) {
    double v = x.data()[static_cast<size_t>(bch)];
    std::fill_n(out.data() + bch * w, w, v);
  }
  return detail::make_result({b, c, h, w}, std::move(out), {x},
                             [b, c, h, w](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (int64_t bch = 0; bch < b * c * h; ++bch) {
                                   double acc = 0.0;
                                   const double* gp = self.grad.data() + bch * w;
                                   for (int64_t i = 0; i < w; ++i) acc += gp[i];
                                   (*g)[static_cast<size_t>(bch)] += acc;
                                 }
                             });
}

Tensor broadcast_h(const Tensor& x, int64_t h) {
  check_rank(x, 4, "broadcast_h");
  if (x.dim(2) != 1) throw std::invalid_argument("broadcast_h: height must be 1");
  int64_t b = x.dim(0), c = x.dim(1), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(b * c * h * w));
  for (int64_t bc = 0; bc < b * c; ++bc)
    for (int64_t i = 0; i < h; ++i)
      std::copy_n(x.data().data() + bc * w, w, out.data() + (bc * h + i) * w);
  return detail::make_result({b, c, h, w}, std::move(out), {x},
                             [b, c, h, w](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (int64_t bc = 0; bc < b * c; ++bc)
                                   for (int64_t i = 0; i < h; ++i) {
                                     const double* gp =
                                         self.grad.data() + (bc * h + i) * w;
                                     double* o = g->data() + bc * w;
                                     for (int64_t j = 0; j < w; ++j) o[j] += gp[j];
                                   }
                             });
}

// ---------------------------------------------------------------- task-specific

Tensor dct_project(const Tensor& x, const std::vector<double>& basis,
                   int64_t bh, int64_t bw) {
  check_rank(x, 4, "dct_project");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h != bh || w != bw || static_cast<int64_t>(basis.size()) != bh * bw)
    throw std::invalid_argument("dct_project: basis " + std::to_string(bh) +
                                "x" + std::to_string(bw) +
                                " does not match input " + shape_str(x.shape()));
  std::vector<double> out(static_cast<size_t>(b * c));
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* p = x.data().data() + bc * h * w;
    double s = 0.0;
    for (int64_t i = 0; i < h * w; ++i) s += p[i] * basis[static_cast<size_t>(i)];
    out[static_cast<size_t>(bc)] = s;
  }
  return detail::make_result({b, c}, std::move(out), {x},
                             [b, c, h, w, basis](Node& self) {
                               if (auto* g = grad_of(self.parents[0]))
                                 for (int64_t bc = 0; bc < b * c; ++bc) {
                                   double gv = self.grad[static_cast<size_t>(bc)];
                                   double* p = g->data() + bc * h * w;
                                   for (int64_t i = 0; i < h * w; ++i)
                                     p[i] += gv * basis[static_cast<size_t>(i)];
                                 }
                             });
}

Tensor warp_bilinear(const Tensor& x, const Tensor& delta) {
  check_rank(x, 4, "warp_bilinear");
  check_rank(delta, 4, "warp_bilinear");
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (delta.dim(0) != b || delta.dim(1) != 2 || delta.dim(2) != h ||
      delta.dim(3) != w)
    throw std::invalid_argument("warp_bilinear: offsets " +
                                shape_str(delta.shape()) +
                                " do not match feature " + shape_str(x.shape()));
  const double dh = static_cast<double>(h), dw = static_cast<double>(w);
  std::vector<double> out(x.data().size(), 0.0);
  const double* dv = delta.data().data();
  for (int64_t bi = 0; bi < b; ++bi) {
    const int64_t doff = bi * 2 * h * w;
    for (int64_t hy = 0; hy < h; ++hy)
      for (int64_t wxp = 0; wxp < w; ++wxp) {
        double d1 = std::clamp(dv[doff + hy * w + wxp], -dh, dh);
        double d2 = std::clamp(dv[doff + h * w + hy * w + wxp], -dw, dw);
        double sy = static_cast<double>(hy) + d1;
        double sx = static_cast<double>(wxp) + d2;
        int64_t y0 = static_cast<int64_t>(std::floor(sy));
        int64_t x0 = static_cast<int64_t>(std::floor(sx));
        double fy = sy - static_cast<double>(y0);
        double fx = sx - static_cast<double>(x0);
        for (int yy = 0; yy < 2; ++yy) {
          int64_t iy = y0 + yy;
          if (iy < 0 || iy >= h) continue;
          double wy = yy ? fy : 1.0 - fy;
          for (int xx = 0; xx < 2; ++xx) {
            int64_t ix = x0 + xx;
            if (ix < 0 || ix >= w) continue;
            double wgt = wy * (xx ? fx : 1.0 - fx);
            if (wgt == 0.0) continue;
            for (int64_t ci = 0; ci < c; ++ci)
              out[((bi * c + ci) * h + hy) * w + wxp] +=
                  wgt * x.data()[((bi * c + ci) * h + iy) * w + ix];
          }
        }
      }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, delta}, [b, c, h, w, dh, dw](Node& self) {
        auto* gx = grad_of(self.parents[0]);
        auto* gd = grad_of(self.parents[1]);
        const auto& xv = self.parents[0]->value;
        const auto& dv = self.parents[1]->value;
        for (int64_t bi = 0; bi < b; ++bi) {
          const int64_t doff = bi * 2 * h * w;
          for (int64_t hy = 0; hy < h; ++hy)
            for (int64_t wxp = 0; wxp < w; ++wxp) {
              double raw1 = dv[doff + hy * w + wxp];
              double raw2 = dv[doff + h * w + hy * w + wxp];
              double d1 = std::clamp(raw1, -dh, dh);
              double d2 = std::clamp(raw2, -dw, dw);
              bool in1 = raw1 > -dh && raw1 < dh;
              bool in2 = raw2 > -dw && raw2 < dw;
              double sy = static_cast<double>(hy) + d1;
              double sx = static_cast<double>(wxp) + d2;
              int64_t y0 = static_cast<int64_t>(std::floor(sy));
              int64_t x0 = static_cast<int64_t>(std::floor(sx));
              double fy = sy - static_cast<double>(y0);
              double fx = sx - static_cast<double>(x0);
              double gd1 = 0.0, gd2 = 0.0;
              for (int yy = 0; yy < 2; ++yy) {
                int64_t iy = y0 + yy;
                if (iy < 0 || iy >= h) continue;
                double wy = yy ? fy : 1.0 - fy;
                double dwy = yy ? 1.0 : -1.0;
                for (int xx = 0; xx < 2; ++xx) {
                  int64_t ix = x0 + xx;
                  if (ix < 0 || ix >= w) continue;
                  double wx = xx ? fx : 1.0 - fx;
                  double dwx = xx ? 1.0 : -1.0;
                  for (int64_t ci = 0; ci < c; ++ci) {
                    double go = self.grad[((bi * c + ci) * h + hy) * w + wxp];
                    if (go == 0.0) continue;
                    double fv = xv[((bi * c + ci) * h + iy) * w + ix];
                    if (gx)
                      (*gx)[((bi * c + ci) * h + iy) * w + ix] += go * wy * wx;
                    gd1 += go * fv * dwy * wx;
                    gd2 += go * fv * wy * dwx;
                  }
                }
              }
              if (gd) {
                if (in1) (*gd)[doff + hy * w + wxp] += gd1;
                if (in2) (*gd)[doff + h * w + hy * w + wxp] += gd2;
              }
            }
        }
      });
}

}  // namespace polyseg::ops
