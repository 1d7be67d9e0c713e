#include <gtest/gtest.h>

#include <set>

#include "meal/augment.hpp"
#include "meal/ops.hpp"
#include "test_util.hpp"

using namespace meal;
using meal::testing::grad_check;
using meal::testing::random_tensor;

namespace {

// 2x2 single-slice tensor [[a, b], [c, d]] with a..d = 1..4.
Tensor<double> abcd() { return Tensor<double>(Shape{1, 2, 2, 1, 1}, {1, 2, 3, 4}); }

std::vector<double> values(const Tensor<double>& t) { return t.vec(); }

std::multiset<double> multiset_of(const Tensor<double>& t) { return {t.vec().begin(), t.vec().end()}; }

// Jacobian of a linear map on R^n, one column per basis vector.
std::vector<std::vector<double>> jacobian(const AugmentationSpec& spec, const Shape& s) {
  Tensor<double> e(s);
  std::vector<std::vector<double>> cols;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e.vec().assign(e.size(), 0.0);
    e[i] = 1.0;
    cols.push_back(aug::apply(e, spec).vec());
  }
  return cols;
}

// Checks that the augmentation is a permutation and that backprop applies its transpose.
void expect_permutation_adjoint(const AugmentationSpec& spec) {
  const Shape s{1, 8, 8, 4, 1};
  const auto J = jacobian(spec, s);
  const std::size_t n = J.size();
  std::vector<int> row_hits(n, 0);
  for (const auto& col : J) {
    int ones = 0;
    for (std::size_t r = 0; r < n; ++r) {
      ASSERT_TRUE(col[r] == 0.0 || col[r] == 1.0);
      if (col[r] == 1.0) ++ones, ++row_hits[r];
    }
    ASSERT_EQ(ones, 1);
  }
  for (int h : row_hits) ASSERT_EQ(h, 1);

  auto x = Var<double>::parameter(random_tensor(s, 31));
  const auto t = random_tensor(s, 32);
  backward(mse(augment(x, spec), Var<double>::constant(t)));
  const auto y = aug::apply(x.value(), spec);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0;
    for (std::size_t r = 0; r < n; ++r) g += J[i][r] * 2.0 * (y[r] - t[r]) / double(n);
    worst = std::max(worst, std::abs(g - x.grad()[i]));
  }
  EXPECT_LT(worst, 1e-10) << to_string(spec.kind());
}

}  // namespace

TEST(Flip, ReversesRequestedAxes) {
  EXPECT_EQ(values(aug::flip(abcd(), true, false)), (std::vector<double>{3, 4, 1, 2}));
  EXPECT_EQ(values(aug::flip(abcd(), false, true)), (std::vector<double>{2, 1, 4, 3}));
  EXPECT_EQ(values(aug::flip(abcd(), false, false)), values(abcd()));
  const auto x = random_tensor(Shape{2, 6, 5, 3, 2}, 1);
  for (bool h : {false, true})
    for (bool w : {false, true}) {
      EXPECT_EQ(aug::flip(aug::flip(x, h, w), h, w).vec(), x.vec());
      EXPECT_EQ(multiset_of(aug::flip(x, h, w)), multiset_of(x));
    }
}

TEST(Flip, SamplerThresholdsDraws) {
  RngStream rng(5, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto [y, spec] = aug::random_flip(abcd(), rng);
    const auto& p = std::get<FlipParams>(spec.params);
    EXPECT_TRUE(spec.sampled);
    EXPECT_EQ(p.flip_h, p.b_h > 0.5);
    EXPECT_EQ(p.flip_w, p.b_w > 0.5);
    EXPECT_EQ(y.vec(), aug::flip(abcd(), p.flip_h, p.flip_w).vec());
  }
}

TEST(Rot90, QuarterTurnsAndGroupInverse) {
  EXPECT_EQ(values(aug::rot90(abcd(), 2)), (std::vector<double>{4, 3, 2, 1}));
  // out[i][j] = in[j][N-1-i]
  EXPECT_EQ(values(aug::rot90(abcd(), 1)), (std::vector<double>{2, 4, 1, 3}));
  EXPECT_EQ(values(aug::rot90(abcd(), 0)), values(abcd()));
  const auto x = random_tensor(Shape{2, 5, 5, 3, 2}, 2);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(aug::rot90(aug::rot90(x, k), 4 - k).vec(), x.vec()) << k;
    EXPECT_EQ(multiset_of(aug::rot90(x, k)), multiset_of(x));
  }
  EXPECT_EQ(aug::rot90(aug::rot90(x, 1), 3).vec(), x.vec());
  EXPECT_THROW(aug::rot90(random_tensor(Shape{1, 4, 5, 2, 1}, 3), 1), ShapeError);
}

TEST(Rot90, DepthAndChannelsUntouched) {
  const auto x = random_tensor(Shape{1, 4, 4, 3, 2}, 4);
  const auto y = aug::rot90(x, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.at(0, i, j, d, c), x.at(0, j, 3 - i, d, c));
}

TEST(CropResize, OffsetsIdentityAndConstant) {
  const auto maps = aug::crop_resize_maps({128, 128, 64}, {100, 100, 50});
  EXPECT_EQ(maps[0].i0.front(), 14u);
  EXPECT_EQ(maps[0].i1.back(), 14u + 99u);
  EXPECT_EQ(maps[2].i0.front(), 7u);

  const auto x = random_tensor(Shape{1, 6, 6, 4, 2}, 5);
  EXPECT_EQ(aug::center_crop_resize(x, {6, 6, 4}).vec(), x.vec());
  const Tensor<double> c(Shape{1, 9, 7, 5, 1}, 0.37);
  const auto cr = aug::center_crop_resize(c, {4, 5, 3});
  for (double v : cr.vec()) EXPECT_NEAR(v, 0.37, 1e-12);
  EXPECT_EQ(aug::center_crop_resize(x, {5, 3, 2}).shape(), x.shape());
  EXPECT_THROW(aug::center_crop_resize(x, {7, 6, 4}), ParameterError);
  EXPECT_THROW(aug::center_crop_resize(x, {0, 6, 4}), ParameterError);
}

TEST(CropResize, MatchesDirectCentreCropInterpolation) {
  // The central 2 voxels upsampled to 4 are sampled at crop positions
  // -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
  Tensor<double> x(Shape{1, 4, 1, 1, 1}, {0, 10, 20, 30});
  const auto y = aug::center_crop_resize(x, {2, 1, 1});
  EXPECT_EQ(values(y), (std::vector<double>{10, 12.5, 17.5, 20}));
}

TEST(Intensity, ShiftAndContrastArithmetic) {
  Tensor<double> x(Shape{1, 2, 1, 1, 1}, {0, 1});
  const auto y = aug::intensity(x, {0.1, 1.1});
  EXPECT_NEAR(y[0], 0.06, 1e-12);
  EXPECT_NEAR(y[1], 1.16, 1e-12);
  EXPECT_EQ(aug::intensity(x, {0.0, 1.0}).vec(), x.vec());
  const auto flat = aug::intensity(x, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(flat[0], 0.5);
  EXPECT_DOUBLE_EQ(flat[1], 0.5);
  // Mixing towards the mean of the shifted tensor is available on request.
  const auto s = aug::intensity(x, {0.1, 1.1, ContrastMean::shifted});
  EXPECT_NEAR(s[0], 1.1 * 0.1 - 0.1 * 0.6, 1e-12);
}

TEST(Intensity, ZeroShiftPreservesPerSampleMean) {
  RngStream rng(6, 0);
  const auto x = random_tensor(Shape{3, 4, 4, 2, 1}, 7);
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(0.9, 1.1);
    const auto y = aug::intensity(x, {0.0, a});
    for (std::size_t b = 0; b < 3; ++b) {
      double mx = 0, my = 0;
      for (std::size_t j = 0; j < 32; ++j) mx += x[b * 32 + j], my += y[b * 32 + j];
      EXPECT_NEAR(mx / 32, my / 32, 1e-6);
    }
  }
}

TEST(Samplers, ParametersStayInRange) {
  RngStream rng(8, 0);
  std::set<int> ks;
  for (int i = 0; i < 10000; ++i) {
    const auto specs = sample_stream_specs(rng, StreamConfig{});
    const auto f = std::get<FlipParams>(specs[0].params);
    ASSERT_TRUE(f.b_h >= 0 && f.b_h < 1 && f.b_w >= 0 && f.b_w < 1);
    const int k = std::get<Rot90Params>(specs[1].params).k;
    ASSERT_TRUE(k >= 0 && k <= 3);
    ks.insert(k);
    const auto c = std::get<CropParams>(specs[2].params).crop;
    ASSERT_EQ(c, (Dims3{25, 25, 12}));
    const auto p = std::get<IntensityParams>(specs[3].params);
    ASSERT_TRUE(p.delta >= -0.1 && p.delta <= 0.1);
    ASSERT_TRUE(p.alpha >= 0.9 && p.alpha <= 1.1);
  }
  EXPECT_EQ(ks.size(), 4u);
}

TEST(Streams, IdentityDeterminismAndShapes) {
  const auto x = random_tensor(Shape{1, 8, 8, 4, 1}, 9);
  const auto id = apply_stream_specs(x, identity_stream_specs({8, 8, 4}));
  for (const auto& v : id.views) EXPECT_EQ(v.vec(), x.vec());

  StreamConfig cfg;
  cfg.crop = {6, 6, 3};
  RngStream r1(10, 0), r2(10, 0);
  const auto a = make_stream_views(x, r1, cfg), b = make_stream_views(x, r2, cfg);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(a.views[k].vec(), b.views[k].vec());
    EXPECT_EQ(a.views[k].shape(), x.shape());
    EXPECT_EQ(a.specs[k].kind(), kStreamOrder[k]);
  }
}

TEST(Spec, JsonRoundTrip) {
  RngStream rng(11, 0);
  for (const auto& s : sample_stream_specs(rng, StreamConfig{})) {
    nlohmann::json j = s;
    const auto back = j.get<AugmentationSpec>();
    EXPECT_EQ(nlohmann::json(back), j);
  }
  EXPECT_THROW(nlohmann::json({{"kind", "warp"}, {"params", {}}}).get<AugmentationSpec>(),
               ParameterError);
}

TEST(AugmentGrad, FlipAndRot90ArePermutations) {
  for (bool h : {false, true})
    for (bool w : {false, true}) expect_permutation_adjoint(AugmentationSpec::flip(h, w));
  for (int k = 0; k < 4; ++k) expect_permutation_adjoint(AugmentationSpec::rot90(k));
}

TEST(AugmentGrad, CropResizeAndIntensityMatchFiniteDifferences) {
  auto x = Var<double>::parameter(random_tensor(Shape{1, 8, 8, 4, 1}, 12));
  const auto t = Var<double>::constant(random_tensor(Shape{1, 8, 8, 4, 1}, 13));
  for (const auto& spec : {AugmentationSpec::crop_resize({6, 6, 3}),
                           AugmentationSpec::crop_resize({5, 7, 2}),
                           AugmentationSpec::intensity(0.07, 0.93),
                           AugmentationSpec::intensity(-0.05, 1.08, ContrastMean::shifted)}) {
    auto f = [&] { return mse(augment(x, spec), t); };
    EXPECT_LT(grad_check(f, x, 1e-4, 1000), 1e-4) << nlohmann::json(spec).dump();
  }
}
