#include <gtest/gtest.h>

#include <set>

#include "meal/interp.hpp"
#include "meal/ops.hpp"
#include "test_util.hpp"

using namespace meal;
using meal::testing::grad_check;
using meal::testing::random_tensor;

namespace {

// Direct evaluation of out[q] = b + sum_o x[q + o - pad] w[o].
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                           long pad, bool transposed) {
  const auto& s = x.shape();
  const long k = static_cast<long>(w.dim(0));
  const std::size_t Ci = w.dim(3), Co = w.dim(4);
  Tensor<double> out(Shape{s[0], s[1], s[2], s[3], Co});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (long h = 0; h < long(s[1]); ++h)
      for (long ww = 0; ww < long(s[2]); ++ww)
        for (long d = 0; d < long(s[3]); ++d)
          for (std::size_t co = 0; co < Co; ++co) {
            double acc = b[co];
            for (long a = 0; a < k; ++a)
              for (long bb = 0; bb < k; ++bb)
                for (long c = 0; c < k; ++c) {
                  const long hh = transposed ? h - a : h + a - pad;
                  const long wq = transposed ? ww - bb : ww + bb - pad;
                  const long dd = transposed ? d - c : d + c - pad;
                  if (hh < 0 || wq < 0 || dd < 0 || hh >= long(s[1]) || wq >= long(s[2]) ||
                      dd >= long(s[3]))
                    continue;
                  for (std::size_t ci = 0; ci < Ci; ++ci)
                    acc += x.at(n, hh, wq, dd, ci) *
                           w[((((a * k + bb) * k + c) * Ci) + ci) * Co + co];
                }
            out.at(n, h, ww, d, co) = acc;
          }
  return out;
}

}  // namespace

TEST(Tensor, ReshapeChecksSize) {
  Tensor<float> t(Shape{2, 3});
  EXPECT_EQ(t.reshaped(Shape{3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped(Shape{4, 2}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ArithmeticRejectsShapeMismatch) {
  Tensor<float> a(Shape{2, 2}, 1.0f), b(Shape{4}, 1.0f);
  EXPECT_THROW(a += b, ShapeError);
  EXPECT_FLOAT_EQ((a + a).sum(), 8.0f);
}

TEST(Rng, CounterStreamsAreReproducible) {
  RngStream a(42, 7), b(42, 7), c(43, 7);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
  EXPECT_NE(RngStream(1).fork("a").next_u64(), RngStream(1).fork("b").next_u64());
  EXPECT_NE(RngStream(1).fork(0).next_u64(), RngStream(1).fork(1).next_u64());
}

TEST(Rng, UniformAndBelowStayInRange) {
  RngStream r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.below(4);
    ASSERT_LT(k, 4u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Autograd, SharedInputAccumulates) {
  auto x = Var<double>::parameter(Tensor<double>(Shape{3}, 2.0));
  backward(mean_all(add(x, x)));
  for (double g : x.grad().vec()) EXPECT_DOUBLE_EQ(g, 2.0 / 3.0);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  auto x = Var<double>::parameter(Tensor<double>(Shape{3}, 2.0));
  NoGradGuard ng;
  auto y = mean_all(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Conv3d, MatchesDirectSumForEachKernelSize) {
  for (std::size_t k : {1u, 3u}) {
    auto x = random_tensor(Shape{2, 5, 4, 3, 3}, 1);
    auto w = random_tensor(Shape{k, k, k, 3, 2}, 2);
    auto b = random_tensor(Shape{2}, 3);
    auto y = conv3d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b),
                    (k - 1) / 2);
    EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, w, b, long(k - 1) / 2, false)), 1e-12);
  }
}

TEST(Conv3d, TransposedMatchesScatterFormula) {
  auto x = random_tensor(Shape{1, 4, 4, 2, 3}, 4);
  auto w = random_tensor(Shape{2, 2, 2, 3, 3}, 5);
  auto b = random_tensor(Shape{3}, 6);
  auto y = conv_transpose3d_same(Var<double>::constant(x), Var<double>::constant(w),
                                 Var<double>::constant(b));
  EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, w, b, 0, true)), 1e-12);
}

TEST(Conv3d, ChunkedPathMatchesSingleChunk) {
  // Enough voxels and channels to force several im2col chunks.
  auto x = random_tensor(Shape{1, 32, 32, 16, 8}, 7);
  auto w = random_tensor(Shape{3, 3, 3, 8, 4}, 8);
  const Tensor<double> b(Shape{4});
  ASSERT_LT(detail::conv_chunk_rows(32 * 32 * 16, 27 * 8), std::size_t{32 * 32 * 16});
  auto y = conv3d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b), 1);
  EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, w, b, 1, false)), 1e-10);
}

TEST(Conv3d, RejectsChannelMismatch) {
  auto x = Var<float>::constant(Tensor<float>(Shape{1, 4, 4, 4, 2}));
  auto w = Var<float>::constant(Tensor<float>(Shape{3, 3, 3, 3, 1}));
  EXPECT_THROW(conv3d(x, w, Var<float>(), 1), ShapeError);
}

TEST(GradCheck, Conv3dInputsWeightsBias) {
  auto x = Var<double>::parameter(random_tensor(Shape{1, 4, 4, 3, 2}, 10));
  auto w = Var<double>::parameter(random_tensor(Shape{3, 3, 3, 2, 2}, 11));
  auto b = Var<double>::parameter(random_tensor(Shape{2}, 12));
  auto t = Var<double>::constant(random_tensor(Shape{1, 4, 4, 3, 2}, 13));
  auto f = [&] { return mse(conv3d(x, w, b, 1), t); };
  EXPECT_LT(grad_check(f, x), 1e-6);
  EXPECT_LT(grad_check(f, w), 1e-6);
  EXPECT_LT(grad_check(f, b), 1e-6);
}

TEST(GradCheck, TransposedConvAndPointwise) {
  auto x = Var<double>::parameter(random_tensor(Shape{1, 4, 4, 2, 2}, 14));
  auto w2 = Var<double>::parameter(random_tensor(Shape{2, 2, 2, 2, 2}, 15));
  auto w1 = Var<double>::parameter(random_tensor(Shape{1, 1, 1, 2, 3}, 16));
  auto t = Var<double>::constant(random_tensor(Shape{1, 4, 4, 2, 3}, 17));
  auto f = [&] { return mse(conv3d(conv_transpose3d_same(x, w2, Var<double>()), w1, Var<double>(), 0), t); };
  EXPECT_LT(grad_check(f, x), 1e-6);
  EXPECT_LT(grad_check(f, w2), 1e-6);
  EXPECT_LT(grad_check(f, w1), 1e-6);
}

TEST(GradCheck, PoolUpsampleActivations) {
  auto x = Var<double>::parameter(random_tensor(Shape{2, 4, 4, 2, 2}, 18));
  auto t = Var<double>::constant(random_tensor(Shape{2, 4, 4, 2, 2}, 19));
  auto f = [&] { return mae(sigmoid(upsample_nearest2(relu(max_pool2(x)))), t); };
  EXPECT_LT(grad_check(f, x), 1e-5);
}

TEST(GradCheck, DenseControllerPieces) {
  auto x = Var<double>::parameter(random_tensor(Shape{2, 1, 2, 2, 3}, 20));
  auto W = Var<double>::parameter(random_tensor(Shape{4, 3}, 21));
  auto b = Var<double>::parameter(random_tensor(Shape{4}, 22));
  auto t = Var<double>::constant(random_tensor(Shape{2, 4}, 23, 0, 1));
  auto f = [&] { return mse(softmax_last(linear(global_avg_pool(x), W, b)), t); };
  EXPECT_LT(grad_check(f, x), 1e-6);
  EXPECT_LT(grad_check(f, W), 1e-6);
  EXPECT_LT(grad_check(f, b), 1e-6);
}

TEST(GradCheck, ConcatAndWeightedSum) {
  auto a = Var<double>::parameter(random_tensor(Shape{2, 2, 2, 2, 1}, 24));
  auto b = Var<double>::parameter(random_tensor(Shape{2, 2, 2, 2, 2}, 25));
  auto c = Var<double>::parameter(random_tensor(Shape{2, 2, 2, 2, 3}, 26));
  auto al = Var<double>::parameter(random_tensor(Shape{2, 2}, 27));
  auto t = Var<double>::constant(random_tensor(Shape{2, 2, 2, 2, 3}, 28));
  auto f = [&] { return mse(weighted_sum<double>({concat_last<double>({a, b}), c}, al), t); };
  EXPECT_LT(grad_check(f, a), 1e-6);
  EXPECT_LT(grad_check(f, b), 1e-6);
  EXPECT_LT(grad_check(f, c), 1e-6);
  EXPECT_LT(grad_check(f, al), 1e-6);
}

TEST(Dropout, IdentityAtEvalAndUnbiasedInTraining) {
  auto x = Var<double>::constant(Tensor<double>(Shape{100000}, 1.0));
  EXPECT_EQ(dropout(x, 0.2, false, nullptr).value(), x.value());
  RngStream rng(5);
  auto y = dropout(x, 0.2, true, &rng);
  EXPECT_NEAR(y.value().mean(), 1.0, 0.01);
  std::size_t zeros = 0;
  for (double v : y.value().vec()) zeros += v == 0.0;
  EXPECT_NEAR(zeros / 1e5, 0.2, 0.01);
  EXPECT_THROW(dropout(x, 0.2, true, nullptr), ParameterError);
}

TEST(MaxPool, RejectsOddDims) {
  auto x = Var<float>::constant(Tensor<float>(Shape{1, 3, 4, 4, 1}));
  EXPECT_THROW(max_pool2(x), ShapeError);
}

TEST(Interp, FullWindowSameLengthIsIdentity) {
  auto m = make_axis_map(7, 0, 7, 7);
  for (std::size_t o = 0; o < 7; ++o) {
    EXPECT_EQ(m.i0[o], o);
    EXPECT_EQ(m.t[o], 0.0);
  }
}

TEST(Interp, TransposeIsAdjoint) {
  const std::array<AxisMap, 3> maps{make_axis_map(6, 1, 4, 5), make_axis_map(5, 0, 5, 8),
                                    make_axis_map(4, 1, 3, 4)};
  auto x = random_tensor(Shape{2, 6, 5, 4, 2}, 30);
  auto y = random_tensor(Shape{2, 5, 8, 4, 2}, 31);
  const auto Ax = interp_separable(x, maps);
  const auto ATy = interp_separable_transpose(y, maps);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < Ax.size(); ++i) lhs += Ax[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ATy[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}
