#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "polyseg/fcam.hpp"
#include "testutil.hpp"

using namespace polyseg;
using namespace polyseg::ops;
using testutil::rand_tensor;

namespace {
std::mt19937_64 gen(321);
}

TEST_CASE("dct basis: DC component is constant and bounds are checked") {
  auto b = dct_basis(5, 4, 0, 0);
  for (double v : b) CHECK(v == doctest::Approx(1.0));
  auto one = dct_basis(1, 1, 0, 0);
  CHECK(one[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(dct_basis(4, 4, 4, 0), std::out_of_range);
  CHECK_THROWS_AS(dct_basis(4, 4, 0, -1), std::out_of_range);
}

TEST_CASE("distinct basis matrices are orthogonal on an 8x8 grid") {
  for (int64_t u = 0; u < 4; ++u)
    for (int64_t v = 0; v < 4; ++v)
      for (int64_t u2 = 0; u2 < 4; ++u2)
        for (int64_t v2 = 0; v2 < 4; ++v2) {
          if (u == u2 && v == v2) continue;
          auto a = dct_basis(8, 8, u, v);
          auto b = dct_basis(8, 8, u2, v2);
          double dot = 0;
          for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
          CHECK(std::abs(dot) < 1e-10);
        }
}

TEST_CASE("dct2d equals the naive double loop and is linear") {
  Tensor x = rand_tensor({1, 3, 4, 4}, gen);
  for (int64_t u = 0; u < 4; ++u)
    for (int64_t v = 0; v < 4; ++v) {
      Tensor y = dct2d(x, u, v);
      for (int64_t c = 0; c < 3; ++c) {
        std::vector<double> chan(x.data().begin() + c * 16,
                                 x.data().begin() + (c + 1) * 16);
        CHECK(y.data()[static_cast<size_t>(c)] ==
              doctest::Approx(oracle::dct2d_single(chan, 4, 4, u, v))
                  .epsilon(1e-12));
      }
    }

  Tensor a = rand_tensor({1, 2, 5, 5}, gen);
  Tensor b = rand_tensor({1, 2, 5, 5}, gen);
  Tensor combo = add(scale(a, 0.3), scale(b, -1.7));
  Tensor lhs = dct2d(combo, 2, 3);
  Tensor rhs = add(scale(dct2d(a, 2, 3), 0.3), scale(dct2d(b, 2, 3), -1.7));
  for (size_t i = 0; i < lhs.data().size(); ++i)
    CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-10));
}

TEST_CASE("dct2d on zeros and on its own basis") {
  Tensor z = Tensor::zeros({1, 2, 6, 6});
  Tensor zq = dct2d(z, 1, 2);
  for (double v : zq.data()) CHECK(v == 0.0);

  auto basis = dct_basis(6, 6, 1, 2);
  Tensor x = Tensor::zeros({1, 1, 6, 6});
  x.data() = basis;
  double norm_sq = 0;
  for (double v : basis) norm_sq += v * v;
  CHECK(dct2d(x, 1, 2).data()[0] == doctest::Approx(norm_sq).epsilon(1e-12));
}

TEST_CASE("zigzag component order starts at the lowest frequencies") {
  auto idx = DctPlan::zigzag_low(6, 7, 7);
  CHECK(idx[0] == std::pair<int64_t, int64_t>{0, 0});
  CHECK(idx[1] == std::pair<int64_t, int64_t>{0, 1});
  CHECK(idx[2] == std::pair<int64_t, int64_t>{1, 0});
  CHECK(idx[3] == std::pair<int64_t, int64_t>{2, 0});
  CHECK(idx[4] == std::pair<int64_t, int64_t>{1, 1});
  CHECK(idx[5] == std::pair<int64_t, int64_t>{0, 2});
  CHECK_THROWS(DctPlan::zigzag_low(50, 7, 7));
}

TEST_CASE("dct plan validation") {
  DctPlan plan = DctPlan::default_plan(16);
  CHECK_NOTHROW(plan.validate(32));
  CHECK_THROWS(plan.validate(24));  // 16 groups do not divide 24
  plan.component_indices[1] = plan.component_indices[0];
  CHECK_THROWS(plan.validate(32));
}

TEST_CASE("positional pool with identity layers reproduces row/column means") {
  nn::Rng rng(10);
  PositionalPool pool(rng, 2);
  // conv_w = conv_h = identity; proj averages the two branches
  auto set_identity = [](nn::Conv2d& c, int64_t ch) {
    std::fill(c.weight.data().begin(), c.weight.data().end(), 0.0);
    for (int64_t i = 0; i < ch; ++i) c.weight.data()[i * ch + i] = 1.0;
    std::fill(c.bias_.data().begin(), c.bias_.data().end(), 0.0);
  };
  set_identity(pool.conv_w, 2);
  set_identity(pool.conv_h, 2);
  std::fill(pool.proj.weight.data().begin(), pool.proj.weight.data().end(), 0.0);
  for (int64_t o = 0; o < 2; ++o) {
    pool.proj.weight.data()[o * 4 + o] = 0.5;        // row-context branch
    pool.proj.weight.data()[o * 4 + 2 + o] = 0.5;    // column-context branch
  }
  std::fill(pool.proj.bias_.data().begin(), pool.proj.bias_.data().end(), 0.0);

  // 2x3 map with known values, one channel active
  Tensor x = Tensor::zeros({1, 2, 2, 3});
  double vals[2][3] = {{1, 2, 3}, {4, 5, 6}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) x.data()[r * 3 + c] = vals[r][c];
  Tensor y = pool.forward(x);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double row_mean = (vals[r][0] + vals[r][1] + vals[r][2]) / 3.0;
      double col_mean = (vals[0][c] + vals[1][c]) / 2.0;
      CHECK(y.data()[r * 3 + c] ==
            doctest::Approx(0.5 * (row_mean + col_mean)).epsilon(1e-12));
    }

  SUBCASE("constant input stays constant") {
    Tensor k = Tensor::full({1, 2, 4, 4}, 0.37);
    Tensor out = pool.forward(k);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("input varying only along W") {
    Tensor vmap = Tensor::zeros({1, 2, 3, 4});
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t r = 0; r < 3; ++r)
        for (int64_t w = 0; w < 4; ++w)
          vmap.data()[(c * 3 + r) * 4 + w] = static_cast<double>(w);
    // extract the column-context branch alone
    std::fill(pool.proj.weight.data().begin(), pool.proj.weight.data().end(), 0.0);
    for (int64_t o = 0; o < 2; ++o) pool.proj.weight.data()[o * 4 + 2 + o] = 1.0;
    Tensor cols = pool.forward(vmap);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t r = 0; r < 3; ++r)
        for (int64_t w = 0; w < 4; ++w)
          CHECK(cols.data()[(c * 3 + r) * 4 + w] ==
                doctest::Approx(static_cast<double>(w)));
    // and the row-context branch is constant in W (and here also in H)
    std::fill(pool.proj.weight.data().begin(), pool.proj.weight.data().end(), 0.0);
    for (int64_t o = 0; o < 2; ++o) pool.proj.weight.data()[o * 4 + o] = 1.0;
    Tensor rows = pool.forward(vmap);
    for (double v : rows.data()) CHECK(v == doctest::Approx(1.5));
  }
}

TEST_CASE("affinity columns sum to one") {
  Tensor q = rand_tensor({2, 5}, gen, -2, 2);
  Tensor k = rand_tensor({2, 5}, gen, -2, 2);
  Tensor a = channel_affinity(q, k);
  CHECK(a.shape() == Shape{2, 5, 5});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t j = 0; j < 5; ++j) {
      double s = 0;
      for (int64_t i = 0; i < 5; ++i) s += a.data()[(b * 5 + i) * 5 + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
      for (int64_t i = 0; i < 5; ++i) {
        double v = a.data()[(b * 5 + i) * 5 + j];
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
}

TEST_CASE("full attention: hand-computed two-channel case") {
  // C=2, H=W=1: K = X itself, A from the outer product, out_j = sum_i A_ij*V_i
  Tensor x = Tensor::from_data({1, 2, 1, 1}, {0.8, -0.4});
  Tensor q = Tensor::from_data({1, 2}, {1.5, -0.7});
  Tensor alpha = Tensor::scalar(0.9);
  Tensor y = full_attention(x, q, alpha);

  double k1 = 0.8, k2 = -0.4;
  double q1 = 1.5, q2 = -0.7;
  auto soft = [](double a, double b) {
    double m = std::max(a, b);
    double ea = std::exp(a - m), eb = std::exp(b - m);
    return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
  };
  auto [a11, a21] = soft(q1 * k1, q2 * k1);  // column j=1: softmax over i
  auto [a12, a22] = soft(q1 * k2, q2 * k2);
  double v1 = 0.8, v2 = -0.4;
  double out1 = a11 * v1 + a21 * v2;
  double out2 = a12 * v1 + a22 * v2;
  CHECK(y.data()[0] == doctest::Approx(0.9 * out1 + 0.8).epsilon(1e-10));
  CHECK(y.data()[1] == doctest::Approx(0.9 * out2 - 0.4).epsilon(1e-10));
}

TEST_CASE("alpha = 0 makes the attention an exact identity") {
  Tensor x = rand_tensor({2, 4, 3, 3}, gen);
  Tensor q = rand_tensor({2, 4}, gen);
  Tensor y = full_attention(x, q, Tensor::scalar(0.0));
  CHECK(y.data() == x.data());

  nn::Rng rng(11);
  SpectralChannelAttention att(rng, 4, SpectralChannelAttention::QueryMode::kDct,
                               DctPlan::default_plan(4));
  CHECK(att.alpha.item() == 0.0);
  Tensor z = att.forward(x);
  CHECK(z.data() == x.data());
}

TEST_CASE("attention output stays finite for large inputs") {
  Tensor x = rand_tensor({1, 4, 4, 4}, gen, -1e3, 1e3);
  nn::Rng rng(12);
  SpectralChannelAttention att(rng, 4, SpectralChannelAttention::QueryMode::kDct,
                               DctPlan::default_plan(4));
  att.alpha.data()[0] = 1.0;
  Tensor big = att.forward(x);
  for (double v : big.data()) CHECK(std::isfinite(v));
}

TEST_CASE("gap query equals dct query up to the (0,0) basis sum on constants") {
  nn::Rng rng(13);
  DctPlan plan;
  plan.n_groups = 1;
  plan.component_indices = {{0, 0}};
  SpectralChannelAttention dct_att(rng, 4,
                                   SpectralChannelAttention::QueryMode::kDct, plan);
  nn::Rng rng2(13);  // identical pooling parameters
  SpectralChannelAttention gap_att(rng2, 4,
                                   SpectralChannelAttention::QueryMode::kGap, plan);
  Tensor x = Tensor::full({1, 4, 8, 8}, 0.6);
  Tensor qd = dct_att.query(x);
  Tensor qg = gap_att.query(x);
  double factor = 49.0;  // sum of the all-ones (0,0) basis over the 7x7 grid
  for (size_t i = 0; i < qd.data().size(); ++i)
    CHECK(qd.data()[i] == doctest::Approx(factor * qg.data()[i]).epsilon(1e-10));

  dct_att.alpha.data()[0] = 0.7;
  gap_att.alpha.data()[0] = 0.7;
  Tensor yd = dct_att.forward(x);
  Tensor yg = gap_att.forward(x);
  for (size_t i = 0; i < yd.data().size(); ++i)
    CHECK(yd.data()[i] == doctest::Approx(yg.data()[i]).epsilon(1e-10));
}

TEST_CASE("fcam heads upsample to the network input resolution") {
  nn::Rng rng(14);
  Fcam fcam(rng, 4, DctPlan::default_plan(4));
  for (int64_t in : {32, 96}) {
    Tensor x1 = rand_tensor({2, 4, in / 4, in / 4}, gen);
    HeadOutput out = fcam.forward(x1, in, in);
    CHECK(out.logits.shape() == Shape{2, 1, in, in});
    CHECK(out.feature.shape() == x1.shape());
  }
}

TEST_CASE("fcam with alpha 0 passes the feature through unchanged") {
  nn::Rng rng(15);
  Fcam fcam(rng, 4, DctPlan::default_plan(4));
  Tensor x1 = rand_tensor({1, 4, 8, 8}, gen);
  HeadOutput out = fcam.forward(x1, 32, 32);
  CHECK(out.feature.data() == x1.data());
}

TEST_CASE("finite-difference gradcheck through the whole module") {
  nn::Rng rng(16);
  Fcam fcam(rng, 4, DctPlan::default_plan(4));
  fcam.attention.alpha.data()[0] = 0.5;  // exercise the attention path
  Tensor x = rand_tensor({2, 4, 4, 4}, gen, -0.8, 0.8, true);
  auto forward = [&] {
    HeadOutput out = fcam.forward(x, 16, 16);
    return add(mean_all(mul(out.feature, out.feature)),
               mean_all(mul(out.logits, out.logits)));
  };
  CHECK(testutil::gradcheck_coord(forward, {x}, 1e-5) < 1e-3);
  std::mt19937_64 dgen(99);
  CHECK(testutil::gradcheck_params(forward, fcam, dgen) < 1e-3);
}
