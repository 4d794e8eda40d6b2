#include <gtest/gtest.h>

#include "l2sa/attention.hpp"
#include "l2sa/gradcheck.hpp"
#include "l2sa/random.hpp"

using namespace l2sa;
namespace att = l2sa::attention;

namespace {

Tensor random_features(Rng& rng, Shape s) { return rng.uniform_tensor(s, -1, 1); }

}  // namespace

TEST(L2Sab, SingleChannelGivesSigmoidOfBias) {
  Rng rng(1);
  const Tensor f = random_features(rng, Shape{2, 1, 6, 6});
  const Tensor w = rng.uniform_tensor(Shape{1, 1, 3, 3}, -1, 1);
  const Tensor m0 = att::l2_sab_attention(f, w, Tensor(Shape{1}), {3});
  for (Real v : m0.data()) EXPECT_EQ(v, 0.5);
  const Tensor m1 = att::l2_sab_attention(f, w, Tensor(Shape{1}, 0.7), {3});
  const Real expected = ops::sigmoid(Tensor::scalar(0.7))[0];
  for (Real v : m1.data()) EXPECT_EQ(v, expected);
  const Tensor out = att::l2_sab_forward(f, w, Tensor(Shape{1}), {3});
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(out[i], Real(0.5) * f[i]);
}

namespace {

Tensor channel_constant(const std::vector<Real>& k, std::size_t h, std::size_t w) {
  Tensor f = Tensor::nchw(1, k.size(), h, w);
  for (std::size_t c = 0; c < k.size(); ++c)
    for (std::size_t i = 0; i < h * w; ++i) f[c * h * w + i] = k[c];
  return f;
}

}  // namespace

TEST(L2Sab, ChannelConstantInputCollapses) {
  Rng rng(2);
  const Tensor w = rng.uniform_tensor(Shape{1, 1, 7, 7}, -1, 1);
  // Power-of-two levels keep every normalization step exact.
  const Tensor exact = att::l2_sab_attention(channel_constant({0.25, 4.0, 1.0}, 5, 5), w, Tensor(Shape{1}));
  for (Real v : exact.data()) EXPECT_EQ(v, 0.5);
  const Tensor general = att::l2_sab_attention(channel_constant({0.2, 1.5, 3.0}, 5, 5), w, Tensor(Shape{1}));
  for (Real v : general.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(L2Sab, MixedSignConstantsDoNotCollapse) {
  // l2(max) = +1/sqrt(HW) but l2(min) = -1/sqrt(HW) when the minimum level is negative.
  Rng rng(2);
  const Tensor w(Shape{1, 1, 1, 1}, 1);
  const Tensor m = att::l2_sab_attention(channel_constant({-1.5, 3.0}, 4, 4), w, Tensor(Shape{1}), {1});
  for (Real v : m.data()) EXPECT_NEAR(v, ops::sigmoid(Tensor::scalar(0.5))[0], 1e-12);
}

TEST(L2Sab, MatchesStepByStepComposition) {
  Rng rng(3);
  const Tensor f = random_features(rng, Shape{1, 3, 6, 6});
  const Tensor w = rng.uniform_tensor(Shape{1, 1, 3, 3}, -1, 1);
  const Tensor b = rng.uniform_tensor(Shape{1}, -1, 1);
  const Tensor mx = ops::l2_normalize_per_sample(ops::channel_reduce(f, ops::Reduce::Max));
  const Tensor mn = ops::l2_normalize_per_sample(ops::channel_reduce(f, ops::Reduce::Min));
  const Tensor expected = ops::sigmoid(ops::conv2d(ops::sub(mx, mn), w, b, {1, 1, 3, 1, ops::Padding::Same}));
  const Tensor m = att::l2_sab_attention(f, w, b, {3});
  EXPECT_LT(max_abs_diff(m, expected), 1e-12);
  EXPECT_LT(max_abs_diff(att::l2_sab_forward(f, w, b, {3}), ops::gate(expected, f)), 1e-12);
}

TEST(L2Sab, WeightShapeValidated) {
  Rng rng(4);
  EXPECT_THROW(att::l2_sab_attention(random_features(rng, Shape{1, 2, 5, 5}), Tensor(Shape{1, 2, 3, 3}),
                                     Tensor(Shape{1}), {3}),
               ShapeError);
}

TEST(Attention, ShapePreservedAndGateBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s{1 + rng.index(2), 1 + rng.index(4), 3 + rng.index(6), 3 + rng.index(6)};
    const Tensor f = random_features(rng, s);
    const std::size_t k = 1 + rng.index(5);
    const Tensor b = rng.uniform_tensor(Shape{1}, -1, 1);
    const Tensor a = att::l2_sab_forward(f, rng.uniform_tensor(Shape{1, 1, k, k}, -2, 2), b, {k});
    const Tensor c = att::cbam_spatial_forward(f, rng.uniform_tensor(Shape{1, 2, k, k}, -2, 2), b, k);
    ASSERT_EQ(a.shape(), s);
    ASSERT_EQ(c.shape(), s);
    for (std::size_t i = 0; i < f.size(); ++i) {
      EXPECT_LE(std::abs(a[i]), std::abs(f[i]));
      EXPECT_LE(std::abs(c[i]), std::abs(f[i]));
    }
  }
}

TEST(Attention, MapsStrictlyInsideUnitInterval) {
  Rng rng(6);
  const Tensor f = random_features(rng, Shape{2, 3, 5, 5});
  const Tensor m = att::l2_sab_attention(f, rng.uniform_tensor(Shape{1, 1, 3, 3}, -1, 1), Tensor(Shape{1}), {3});
  for (Real v : m.data()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(L2Sab, ScaleInvariantWhileCbamIsNot) {
  Rng rng(7);
  const Tensor f = random_features(rng, Shape{2, 4, 6, 6});
  const Tensor w1 = rng.uniform_tensor(Shape{1, 1, 5, 5}, -1, 1);
  const Tensor w2 = rng.uniform_tensor(Shape{1, 2, 5, 5}, -1, 1);
  const Tensor b(Shape{1}, 0.1);
  for (Real c : {Real(0.001), Real(0.5), Real(10), Real(1000)}) {
    const Tensor scaled = ops::scale(f, c);
    EXPECT_LT(max_abs_diff(att::l2_sab_attention(scaled, w1, b, {5}), att::l2_sab_attention(f, w1, b, {5})), 1e-6);
    EXPECT_LT(max_abs_diff(att::l2_sab_forward(scaled, w1, b, {5}), ops::scale(att::l2_sab_forward(f, w1, b, {5}), c)),
              1e-6 * c);
  }
  const Tensor scaled = ops::scale(f, 10);
  EXPECT_GT(max_abs_diff(att::cbam_spatial_attention(scaled, w2, b, 5), att::cbam_spatial_attention(f, w2, b, 5)), 1e-3);
}

TEST(Cbam, ConstantInputWithZeroWeights) {
  const Tensor f(Shape{1, 3, 4, 4}, 2.5);
  const Tensor m = att::cbam_spatial_attention(f, Tensor(Shape{1, 2, 7, 7}), Tensor(Shape{1}), 7);
  for (Real v : m.data()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(ops::channel_reduce(f, ops::Reduce::Max)[0], ops::channel_reduce(f, ops::Reduce::Mean)[0]);
}

TEST(Cbam, SingleChannelConcatenatesInputTwice) {
  Rng rng(8);
  const Tensor f = random_features(rng, Shape{1, 1, 4, 4});
  const Tensor stacked =
      ops::concat_channels(ops::channel_reduce(f, ops::Reduce::Max), ops::channel_reduce(f, ops::Reduce::Mean));
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(stacked[i], f[i]);
    EXPECT_EQ(stacked[16 + i], f[i]);
  }
}

TEST(Cbam, MatchesStepByStepComposition) {
  Rng rng(9);
  const Tensor f = random_features(rng, Shape{2, 3, 5, 5});
  const Tensor w = rng.uniform_tensor(Shape{1, 2, 3, 3}, -1, 1);
  const Tensor b = rng.uniform_tensor(Shape{1}, -1, 1);
  const Tensor stacked =
      ops::concat_channels(ops::channel_reduce(f, ops::Reduce::Max), ops::channel_reduce(f, ops::Reduce::Mean));
  const Tensor expected = ops::gate(ops::sigmoid(ops::conv2d(stacked, w, b, {2, 1, 3})), f);
  EXPECT_LT(max_abs_diff(att::cbam_spatial_forward(f, w, b, 3), expected), 1e-12);
}

TEST(Cbam, GradCheckPasses) {
  Rng rng(10);
  ParameterSet p;
  p.add("w", rng.uniform_tensor(Shape{1, 2, 3, 3}, -1, 1));
  p.add("b", rng.uniform_tensor(Shape{1}, -1, 1));
  const auto report = grad_check(
      "cbam",
      [](Tape& t, Var x, const ParameterSet& ps) {
        return att::cbam_spatial_forward(Recorder(t, ps), x, t.param(ps, "w"), t.param(ps, "b"), 3);
      },
      p, rng.uniform_tensor(Shape{2, 3, 6, 6}, -1, 1));
  EXPECT_TRUE(report.passed()) << report.table();
}

TEST(Attention, KindParsing) {
  EXPECT_EQ(att::parse_kind("l2sab"), att::Kind::L2Sab);
  EXPECT_EQ(att::parse_kind("cbam_spatial"), att::Kind::CbamSpatial);
  EXPECT_EQ(att::parse_kind("none"), att::Kind::None);
  EXPECT_THROW(att::parse_kind("se"), Error);
}
