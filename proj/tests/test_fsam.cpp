#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "polyseg/fsam.hpp"
#include "testutil.hpp"

using namespace polyseg;
using namespace polyseg::ops;
using testutil::rand_tensor;

namespace {

std::mt19937_64 gen(555);

EncoderConfig tiny_enc() {
  EncoderConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.heads_per_stage = {1, 2, 4, 8};
  cfg.kv_reduction_rates = {{4, 8}, {2, 4}, {1, 2}, {1, 1}};
  return cfg;
}

FeaturePyramid rand_pyramid(int64_t base, int64_t b = 1) {
  FeaturePyramid pyr;
  pyr.x1 = rand_tensor({b, 8, base / 4, base / 4}, gen);
  pyr.x2 = rand_tensor({b, 16, base / 8, base / 8}, gen);
  pyr.x3 = rand_tensor({b, 32, base / 16, base / 16}, gen);
  pyr.x4 = rand_tensor({b, 64, base / 32, base / 32}, gen);
  return pyr;
}

}  // namespace

TEST_CASE("subtraction unit: zero on equal inputs with tied operands") {
  nn::Rng rng(1);
  SubtractionUnit su(rng, 4);
  su.tie_operands();
  su.train(false);
  Tensor a = rand_tensor({1, 4, 5, 5}, gen);
  Tensor z = su.forward(a, a);
  for (double v : z.data()) CHECK(v == 0.0);

  SUBCASE("symmetric in its arguments") {
    Tensor b = rand_tensor({1, 4, 5, 5}, gen);
    Tensor ab = su.forward(a, b);
    Tensor ba = su.forward(b, a);
    CHECK(ab.data() == ba.data());
  }
  SUBCASE("non-negative") {
    Tensor b = rand_tensor({1, 4, 5, 5}, gen);
    Tensor s = su.forward(a, b);
    for (double v : s.data()) CHECK(v >= 0.0);
  }
  SUBCASE("shape mismatch rejected") {
    Tensor b = rand_tensor({1, 4, 4, 4}, gen);
    CHECK_THROWS_AS(su.forward(a, b), std::invalid_argument);
  }
}

TEST_CASE("subtraction unit: integer inputs through an identity-initialized unit") {
  nn::Rng rng(2);
  SubtractionUnit su(rng, 1);
  // conv = centered identity kernel, eval-mode norm with (0,1) statistics
  auto make_identity = [](nn::CbsUnit& f) {
    std::fill(f.conv.weight.data().begin(), f.conv.weight.data().end(), 0.0);
    f.conv.weight.data()[4] = 1.0;  // center of the 3x3 kernel
    std::fill(f.conv.bias_.data().begin(), f.conv.bias_.data().end(), 0.0);
  };
  make_identity(su.f_a);
  make_identity(su.f_b);
  su.train(false);
  Tensor a = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_data({1, 1, 2, 2}, {4.0, 1.0, 3.0, 0.0});
  Tensor s = su.forward(a, b);
  // f reduces to SiLU under identity conv and unit statistics
  auto silu_ref = [](double x) { return x / (1.0 + std::exp(-x)); };
  const double eps_bn = 1e-5;
  for (int i = 0; i < 4; ++i) {
    double fa = silu_ref(a.data()[i] / std::sqrt(1.0 + eps_bn));
    double fb = silu_ref(b.data()[i] / std::sqrt(1.0 + eps_bn));
    CHECK(s.data()[i] == doctest::Approx(std::abs(fa - fb)).epsilon(1e-12));
  }
}

TEST_CASE("offset predictor is zero-initialized with four output channels") {
  nn::Rng rng(3);
  OffsetPredictor pred(rng, 8);
  Tensor c = rand_tensor({2, 8, 6, 6}, gen);
  Tensor p = rand_tensor({2, 8, 6, 6}, gen);
  auto [dc, dp] = pred.forward(c, p);
  CHECK(dc.shape() == Shape{2, 2, 6, 6});
  CHECK(dp.shape() == Shape{2, 2, 6, 6});
  for (double v : dc.data()) CHECK(v == 0.0);
  for (double v : dp.data()) CHECK(v == 0.0);
  CHECK(pred.conv.weight.dim(0) == 4);
}

TEST_CASE("warp with zero offsets is the identity") {
  Tensor f = rand_tensor({2, 3, 6, 7}, gen);
  Tensor d = Tensor::zeros({2, 2, 6, 7});
  Tensor u = warp_bilinear(f, d);
  for (size_t i = 0; i < f.data().size(); ++i) CHECK(u.data()[i] == f.data()[i]);
}

TEST_CASE("warp undoes an integer one-row shift on interior rows") {
  const int64_t h = 6, w = 5;
  Tensor orig = rand_tensor({1, 1, h, w}, gen);
  Tensor shifted = Tensor::zeros({1, 1, h, w});
  for (int64_t r = 1; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      shifted.data()[static_cast<size_t>(r * w + c)] =
          orig.data()[static_cast<size_t>((r - 1) * w + c)];
  Tensor d = Tensor::zeros({1, 2, h, w});
  for (int64_t i = 0; i < h * w; ++i) d.data()[static_cast<size_t>(i)] = 1.0;
  Tensor u = warp_bilinear(shifted, d);
  for (int64_t r = 0; r < h - 1; ++r)
    for (int64_t c = 0; c < w; ++c)
      CHECK(u.data()[static_cast<size_t>(r * w + c)] ==
            doctest::Approx(orig.data()[static_cast<size_t>(r * w + c)])
                .epsilon(1e-14));
}

TEST_CASE("fractional offset on a ramp gives exact midpoints") {
  const int64_t h = 3, w = 6;
  Tensor f = Tensor::zeros({1, 1, h, w});
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      f.data()[static_cast<size_t>(r * w + c)] = static_cast<double>(c);
  Tensor d = Tensor::zeros({1, 2, h, w});
  for (int64_t i = 0; i < h * w; ++i)
    d.data()[static_cast<size_t>(h * w + i)] = 0.5;  // horizontal channel
  Tensor u = warp_bilinear(f, d);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c + 1 < w; ++c)
      CHECK(u.data()[static_cast<size_t>(r * w + c)] ==
            doctest::Approx(static_cast<double>(c) + 0.5).epsilon(1e-14));
}

TEST_CASE("warp matches the quadruple-loop sampler") {
  Tensor f = rand_tensor({1, 2, 4, 4}, gen);
  Tensor d = rand_tensor({1, 2, 4, 4}, gen, -1.6, 1.6);
  Tensor u = warp_bilinear(f, d);
  std::vector<double> ref = oracle::warp_quadloop(f.data(), 2, 4, 4, d.data());
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(u.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("gradcheck through offset predictor and warp") {
  nn::Rng rng(4);
  OffsetPredictor pred(rng, 4);
  // random fractional-offset regime instead of the zero init
  for (auto& v : pred.conv.weight.data()) v = 0.05 * rng.normal(0, 1);
  for (auto& v : pred.conv.bias_.data()) v = 0.3 + 0.05 * rng.normal(0, 1);
  Tensor c = rand_tensor({1, 4, 6, 6}, gen, -0.8, 0.8, true);
  Tensor p = rand_tensor({1, 4, 6, 6}, gen, -0.8, 0.8, true);
  auto forward = [&] {
    auto [dc, dp] = pred.forward(c, p);
    Tensor u = add(warp_bilinear(c, dc), warp_bilinear(p, dp));
    return mean_all(mul(u, u));
  };
  CHECK(testutil::gradcheck_coord(forward, {c, p}, 1e-6) < 1e-3);
  std::mt19937_64 dgen(7);
  CHECK(testutil::gradcheck_params(forward, pred, dgen, {}, 1e-6) < 1e-3);
}

TEST_CASE("feature alignment degenerates to upsample-add under zero offsets") {
  nn::Rng rng(5);
  FeatureAlign fa(rng, 4);
  Tensor coarse = rand_tensor({1, 4, 3, 3}, gen);
  Tensor fine = rand_tensor({1, 4, 6, 6}, gen);
  Tensor out = fa.forward(coarse, fine);
  CHECK(out.shape() == fine.shape());
  Tensor expect = add(upsample_bilinear(coarse, 6, 6), fine);
  for (size_t i = 0; i < expect.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-14));

  SUBCASE("non-adjacent scales rejected") {
    Tensor too_small = rand_tensor({1, 4, 1, 1}, gen);
    CHECK_THROWS_AS(fa.forward(too_small, fine), std::invalid_argument);
  }
}

TEST_CASE("feature alignment equals the scalar-loop sampler with live offsets") {
  nn::Rng rng(6);
  FeatureAlign fa(rng, 2);
  for (auto& v : fa.offsets.conv.weight.data()) v = 0.1 * rng.normal(0, 1);
  Tensor coarse = rand_tensor({1, 2, 2, 2}, gen);
  Tensor fine = rand_tensor({1, 2, 4, 4}, gen);
  Tensor out = fa.forward(coarse, fine);

  Tensor up = upsample_bilinear(coarse, 4, 4);
  auto [dc, dp] = fa.offsets.forward(up, fine);
  std::vector<double> ref_a = oracle::warp_quadloop(up.data(), 2, 4, 4, dc.data());
  std::vector<double> ref_b =
      oracle::warp_quadloop(fine.data(), 2, 4, 4, dp.data());
  for (size_t i = 0; i < ref_a.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref_a[i] + ref_b[i]).epsilon(1e-10));
}

TEST_CASE("fsam: equal projected levels with shared operands zero the S-branch") {
  // each subtraction stage must see pairwise-equal inputs, which pins every
  // projected level to the zero map; the fused feature then equals the
  // (likewise zero) alignment branch exactly
  nn::Rng rng(7);
  Fsam fsam(rng, tiny_enc(), 4, FsamWiring::kParallel);
  fsam.train(false);
  for (auto& proj : fsam.projections) proj->zero_init();
  for (auto& su : fsam.sus) su->tie_operands();
  FeaturePyramid pyr = rand_pyramid(64);
  HeadOutput out = fsam.forward(pyr, 64, 64);
  for (double v : out.feature.data()) CHECK(v == 0.0);
}

TEST_CASE("fsam: zero offsets reduce the FA branch to upsample-add") {
  nn::Rng rng(17);
  Fsam fsam(rng, tiny_enc(), 4, FsamWiring::kParallel);
  fsam.train(false);
  // silence the subtraction branch by tying operands and zeroing projections,
  // then inject constants through the projection biases: every su sees two
  // different constants, so give both cascades the same values instead by
  // comparing against an explicit recomputation
  FeaturePyramid pyr = rand_pyramid(64);
  Tensor p1 = fsam.projections[0]->forward(pyr.x1);
  Tensor p2 = fsam.projections[1]->forward(pyr.x2);
  Tensor p3 = fsam.projections[2]->forward(pyr.x3);
  Tensor p4 = fsam.projections[3]->forward(pyr.x4);
  Tensor a = add(upsample_bilinear(p4, p3.dim(2), p3.dim(3)), p3);
  a = add(upsample_bilinear(a, p2.dim(2), p2.dim(3)), p2);
  a = add(upsample_bilinear(a, p1.dim(2), p1.dim(3)), p1);
  Tensor s =
      fsam.sus[0]->forward(upsample_bilinear(p4, p3.dim(2), p3.dim(3)), p3);
  s = fsam.sus[1]->forward(upsample_bilinear(s, p2.dim(2), p2.dim(3)), p2);
  s = fsam.sus[2]->forward(upsample_bilinear(s, p1.dim(2), p1.dim(3)), p1);
  HeadOutput out = fsam.forward(pyr, 64, 64);
  for (size_t i = 0; i < out.feature.data().size(); ++i)
    CHECK(out.feature.data()[i] ==
          doctest::Approx(s.data()[i] + a.data()[i]).epsilon(1e-12));
}

TEST_CASE("fsam shapes follow the stride ladder") {
  nn::Rng rng(8);
  Fsam fsam(rng, tiny_enc(), 32, FsamWiring::kParallel);
  fsam.train(false);
  FeaturePyramid pyr = rand_pyramid(96, 2);
  HeadOutput out = fsam.forward(pyr, 96, 96);
  CHECK(out.feature.shape() == Shape{2, 32, 24, 24});
  CHECK(out.logits.shape() == Shape{2, 1, 96, 96});
}

TEST_CASE("interleaved wiring runs and keeps the contract shapes") {
  nn::Rng rng(9);
  Fsam fsam(rng, tiny_enc(), 8, FsamWiring::kInterleaved);
  fsam.train(false);
  FeaturePyramid pyr = rand_pyramid(64);
  HeadOutput out = fsam.forward(pyr, 64, 64);
  CHECK(out.feature.shape() == Shape{1, 8, 16, 16});
  CHECK(out.logits.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("gradients reach every pyramid level") {
  nn::Rng rng(10);
  Fsam fsam(rng, tiny_enc(), 4, FsamWiring::kParallel);
  FeaturePyramid pyr = rand_pyramid(96);
  for (Tensor* t : {&pyr.x1, &pyr.x2, &pyr.x3, &pyr.x4})
    t->set_requires_grad(true);
  HeadOutput out = fsam.forward(pyr, 96, 96);
  Tensor loss = mean_all(mul(out.logits, out.logits));
  loss.backward();
  for (Tensor* t : {&pyr.x1, &pyr.x2, &pyr.x3, &pyr.x4}) {
    double norm = 0;
    for (double v : t->grad()) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("end-to-end gradcheck on a one-sample toy pyramid") {
  nn::Rng rng(11);
  Fsam fsam(rng, tiny_enc(), 4, FsamWiring::kParallel);
  fsam.train(true);
  // live offsets so the warp path is exercised away from its kinks
  for (auto& fa : fsam.fas)
    for (auto& v : fa->offsets.conv.weight.data()) v = 0.05 * rng.normal(0, 1);
  FeaturePyramid pyr = rand_pyramid(96);
  for (Tensor* t : {&pyr.x1, &pyr.x2, &pyr.x3, &pyr.x4})
    t->set_requires_grad(true);
  auto forward = [&] {
    HeadOutput out = fsam.forward(pyr, 96, 96);
    return add(mean_all(mul(out.feature, out.feature)),
               mean_all(mul(out.logits, out.logits)));
  };
  std::mt19937_64 dgen(13);
  double err = testutil::gradcheck_directional(
      forward, {pyr.x1, pyr.x2, pyr.x3, pyr.x4}, dgen, 1e-6);
  CHECK(err < 1e-3);
  double perr = testutil::gradcheck_params(forward, fsam, dgen, {}, 1e-6);
  CHECK(perr < 1e-3);
}
