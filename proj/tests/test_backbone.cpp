#include <gtest/gtest.h>

#include "meal/backbone.hpp"
#include "test_util.hpp"

using namespace meal;
using meal::testing::grad_check;
using meal::testing::random_tensor;

namespace {

template <class T>
void zero_all(NamedParams<T> ps) {
  for (auto& [name, p] : ps) p.mutable_value().fill(T{0});
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Tiny {
  Encoder<double> enc;
  Decoder<double> dec;
  OutputHead<double> head;

  explicit Tiny(bool skips, std::uint64_t seed = 1) {
    RngStream rng(seed, 0);
    enc = Encoder<double>::make(1, {2, 3, 4}, 0.2, DropoutPlacement::after_second_conv, rng);
    dec = Decoder<double>::make(4, {2, 3}, {2, 3}, skips, 0.2, DropoutPlacement::after_second_conv, rng);
    head = OutputHead<double>::make(dec.out_channels({2, 3}), rng);
    // Non-zero biases so the check also covers them.
    NamedParams<double> ps;
    enc.collect("e", ps);
    dec.collect("d", ps);
    head.collect("h", ps);
    RngStream b(seed + 100, 0);
    for (auto& [n, p] : ps)
      if (p.shape().size() == 1)
        for (auto& v : p.mutable_value().vec()) v = b.uniform(-0.1, 0.1);
  }
  Var<double> operator()(const Var<double>& x) const {
    auto e = enc(x, false, nullptr);
    std::vector<Var<double>> s;
    for (auto& f : e.skips) s.push_back(f.tensor);
    return head(dec(e.bottleneck.tensor, s, false, nullptr));
  }
};

}  // namespace

TEST(ResidualBlock, ZeroKernelsGiveIdentity) {
  RngStream rng(1, 0);
  auto rrb = ResidualBlock<double>::make(3, BlockConfig{3, 0.2}, rng);
  NamedParams<double> ps;
  rrb.collect("b", ps);
  zero_all(ps);
  const auto x = random_tensor(Shape{1, 4, 4, 2, 3}, 2);
  EXPECT_EQ(rrb(Var<double>::constant(x), false, nullptr).value().vec(), x.vec());
}

TEST(ResidualBlock, PreservesSpatialShapeForAnyWidth) {
  RngStream rng(3, 0);
  const auto x = Var<double>::constant(random_tensor(Shape{2, 4, 6, 2, 2}, 4));
  for (std::size_t f : {1, 2, 5}) {
    auto rrb = ResidualBlock<double>::make(2, BlockConfig{f, 0.2}, rng);
    EXPECT_EQ(rrb(x, false, nullptr).shape(), (Shape{2, 4, 6, 2, f}));
    EXPECT_EQ(rrb.projection.has_value(), f != 2);
  }
  EXPECT_THROW(ResidualBlock<double>::make(2, BlockConfig{0, 0.2}, rng), ConfigError);
  EXPECT_THROW(ResidualBlock<double>::make(2, BlockConfig{2, 1.0}, rng), ConfigError);
}

TEST(ResidualBlock, SingleVoxelMatchesScalarArithmetic) {
  RngStream rng(5, 0);
  auto rrb = ResidualBlock<double>::make(1, BlockConfig{1, 0.0}, rng);
  // Only the centre tap of a same-padded 3x3x3 kernel sees a 1x1x1 input.
  const double w1 = 0.7, b1 = -0.1, w2 = -1.3, b2 = 0.9;
  for (auto* c : {&rrb.conv1, &rrb.conv2}) c->weight.mutable_value().fill(5.0);
  rrb.conv1.weight.mutable_value()[13] = w1;
  rrb.conv1.bias.mutable_value()[0] = b1;
  rrb.conv2.weight.mutable_value()[13] = w2;
  rrb.conv2.bias.mutable_value()[0] = b2;
  for (double x : {-0.4, 0.2, 1.5}) {
    const double expect = x + std::max(0.0, w2 * std::max(0.0, w1 * x + b1) + b2);
    const auto y = rrb(Var<double>::constant(Tensor<double>(Shape{1, 1, 1, 1, 1}, x)), false, nullptr);
    EXPECT_DOUBLE_EQ(y.value()[0], expect) << x;
  }
}

TEST(ResidualBlock, DropoutOnlyWhenTraining) {
  RngStream rng(6, 0);
  auto rrb = ResidualBlock<double>::make(2, BlockConfig{2, 0.5}, rng);
  const auto x = Var<double>::constant(random_tensor(Shape{1, 4, 4, 4, 2}, 7));
  EXPECT_EQ(rrb(x, false, nullptr).value().vec(), rrb(x, false, nullptr).value().vec());
  RngStream d1(8, 0), d2(9, 0);
  EXPECT_NE(rrb(x, true, &d1).value().vec(), rrb(x, true, &d2).value().vec());
}

TEST(Encoder, BottleneckShapesAndSkips) {
  RngStream rng(10, 0);
  auto enc = Encoder<float>::make(1, {64, 128, 256}, 0.2, DropoutPlacement::after_second_conv, rng);
  NoGradGuard ng;
  const auto out = enc(Var<float>::constant(Tensor<float>(Shape{1, 32, 32, 16, 1}, 0.3f)), false, nullptr);
  EXPECT_EQ(out.bottleneck.shape(), (Shape{1, 8, 8, 4, 256}));
  ASSERT_EQ(out.skips.size(), 2u);
  EXPECT_EQ(out.skips[0].shape(), (Shape{1, 32, 32, 16, 64}));
  EXPECT_EQ(out.skips[1].shape(), (Shape{1, 16, 16, 8, 128}));
  EXPECT_EQ(out.bottleneck.level, 2);

  const auto zero = enc(Var<float>::constant(Tensor<float>(Shape{1, 8, 8, 4, 1})), false, nullptr);
  for (float v : zero.bottleneck.tensor.value().vec()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(enc(Var<float>::constant(Tensor<float>(Shape{1, 8, 6, 4, 1})), false, nullptr), ShapeError);
}

TEST(Encoder, FullScaleInputReachesQuarterResolution) {
  // Full 128x128x64 forward at the published widths (about 250 GFLOP).
  RngStream rng(11, 0);
  auto enc = Encoder<float>::make(1, {64, 128, 256}, 0.2, DropoutPlacement::after_second_conv, rng);
  NoGradGuard ng;
  const auto out = enc(Var<float>::constant(Tensor<float>(Shape{1, 128, 128, 64, 1}, 0.5f)), false, nullptr);
  EXPECT_EQ(out.bottleneck.shape(), (Shape{1, 32, 32, 16, 256}));
  EXPECT_TRUE(out.bottleneck.tensor.value().all_finite());
}

TEST(Decoder, UpsamplesFourTimesAndKeepsZero) {
  RngStream rng(12, 0);
  auto dec = Decoder<float>::make(256, {64, 128}, {64, 128}, false, 0.2,
                                  DropoutPlacement::after_second_conv, rng);
  NoGradGuard ng;
  const auto y = dec(Var<float>::constant(Tensor<float>(Shape{1, 8, 8, 4, 256})), {}, false, nullptr);
  EXPECT_EQ(y.shape(), (Shape{1, 32, 32, 16, 128}));
  for (float v : y.value().vec()) EXPECT_EQ(v, 0.0f);
  // Residual block first, then upsampling: the first block runs at the bottleneck width.
  EXPECT_EQ(dec.blocks[0].cfg.filters, 64u);
  EXPECT_EQ(dec.blocks[0].conv1.in_channels(), 256u);
  EXPECT_EQ(dec.ups[1].conv.kernel(), 2u);
}

TEST(Decoder, SkipsConcatenateMatchingScale) {
  RngStream rng(13, 0);
  auto dec = Decoder<double>::make(4, {2, 3}, {2, 3}, true, 0.2, DropoutPlacement::after_second_conv, rng);
  EXPECT_EQ(dec.out_channels({2, 3}), 3u + 2u);
  const auto y = dec(Var<double>::constant(random_tensor(Shape{1, 2, 2, 1, 4}, 14)),
                     {Var<double>::constant(random_tensor(Shape{1, 8, 8, 4, 2}, 15)),
                      Var<double>::constant(random_tensor(Shape{1, 4, 4, 2, 3}, 16))},
                     false, nullptr);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 4, 5}));
  EXPECT_THROW(Decoder<double>::make(4, {2, 3}, {2}, true, 0.2, DropoutPlacement::after_second_conv, rng),
               ConfigError);
}

TEST(OutputHead, SigmoidRangeAndSaturation) {
  RngStream rng(17, 0);
  auto head = OutputHead<double>::make(3, rng);
  const auto x = Var<double>::constant(random_tensor(Shape{2, 4, 4, 2, 3}, 18, -5, 5));
  const auto y = head(x);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 2, 1}));
  for (double v : y.value().vec()) EXPECT_TRUE(v > 0.0 && v < 1.0);
  head.conv.weight.mutable_value().fill(0.0);
  const auto half = head(x);
  for (double v : half.value().vec()) EXPECT_EQ(v, 0.5);
  head.conv.bias.mutable_value()[0] = 20.0;
  const auto sat = head(x);
  for (double v : sat.value().vec()) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(Backbone, RoundTripShapeAndDeterminism) {
  for (bool skips : {false, true}) {
    Tiny net(skips);
    const auto x = Var<double>::constant(random_tensor(Shape{2, 8, 8, 4, 1}, 19, 0, 1));
    const auto a = net(x), b = net(x);
    EXPECT_EQ(a.shape(), (Shape{2, 8, 8, 4, 1}));
    EXPECT_EQ(a.value().vec(), b.value().vec());
    EXPECT_EQ(max_abs_diff(a.value(), b.value()), 0.0);
  }
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  for (bool skips : {false, true}) {
    Tiny net(skips, 20);
    auto x = Var<double>::parameter(random_tensor(Shape{1, 8, 8, 4, 1}, 21, 0, 1));
    const auto t = Var<double>::constant(random_tensor(Shape{1, 8, 8, 4, 1}, 22, 0, 1));
    auto f = [&] { return mse(net(x), t); };
    EXPECT_LT(grad_check(f, x, 1e-4, 256), 1e-3) << "skips=" << skips;
  }
}
