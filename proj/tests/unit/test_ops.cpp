#include <numeric>

#include "test_support.hpp"

using namespace tessera;
using tessera::testing::expect_gradients;
using tessera::testing::random_tensor;

namespace {

Rng& rng() {
  static Rng r(1234);
  return r;
}

}  // namespace

TEST(Ops, BroadcastAddMatchesLoop) {
  Tensor a = random_tensor({2, 3, 4}, rng());
  Tensor b = random_tensor({3, 1}, rng());
  Tensor c = ops::add(a, b);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k)
        EXPECT_FLOAT_EQ(c.data()[(i * 3 + j) * 4 + k], a.data()[(i * 3 + j) * 4 + k] + b.data()[j]);
}

TEST(Ops, ElementwiseGradients) {
  expect_gradients([](const auto& x) { return ops::add(x[0], x[1]); },
                   {random_tensor({2, 3, 4}, rng()), random_tensor({3, 1}, rng())});
  expect_gradients([](const auto& x) { return ops::sub(x[0], x[1]); },
                   {random_tensor({3, 4}, rng()), random_tensor({4}, rng())});
  expect_gradients([](const auto& x) { return ops::mul(x[0], x[1]); },
                   {random_tensor({2, 1, 4}, rng()), random_tensor({3, 1}, rng())});
  expect_gradients([](const auto& x) { return ops::div(x[0], x[1]); },
                   {random_tensor({3, 4}, rng()), random_tensor({3, 4}, rng(), 1.0, 2.0)});
  expect_gradients([](const auto& x) { return ops::exp(x[0]); }, {random_tensor({5}, rng())});
  expect_gradients([](const auto& x) { return ops::log(x[0]); }, {random_tensor({5}, rng(), 0.5, 2.0)});
  expect_gradients([](const auto& x) { return ops::sqrt(x[0]); }, {random_tensor({5}, rng(), 0.5, 2.0)});
  expect_gradients([](const auto& x) { return ops::sigmoid(x[0]); }, {random_tensor({7}, rng())});
  expect_gradients([](const auto& x) { return ops::silu(x[0]); }, {random_tensor({7}, rng())});
  expect_gradients([](const auto& x) { return ops::gelu(x[0]); }, {random_tensor({7}, rng(), -3, 3)});
  expect_gradients([](const auto& x) { return ops::square(x[0]); }, {random_tensor({7}, rng())});
}

TEST(Ops, ReductionGradients) {
  expect_gradients([](const auto& x) { return ops::sum_axis(x[0], 1); }, {random_tensor({2, 3, 4}, rng())});
  expect_gradients([](const auto& x) { return ops::mean_axis(x[0], -1, true); }, {random_tensor({2, 3, 4}, rng())});
  expect_gradients([](const auto& x) { return ops::mean(x[0]); }, {random_tensor({2, 3}, rng())});
}

TEST(Ops, MatmulAllTransposes) {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      expect_gradients([=](const auto& x) { return ops::matmul(x[0], x[1], ta, tb); },
                       {random_tensor(sa, rng()), random_tensor(sb, rng())});
      Shape sb2 = tb ? Shape{5, 4} : Shape{4, 5};
      expect_gradients([=](const auto& x) { return ops::matmul(x[0], x[1], ta, tb); },
                       {random_tensor(sa, rng()), random_tensor(sb2, rng())});
    }
  }
}

TEST(Ops, MatmulValues) {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor c = ops::matmul(a, b);
  EXPECT_EQ(std::vector<float>(c.values().begin(), c.values().end()), (std::vector<float>{19, 22, 43, 50}));
  Tensor ct = ops::matmul(a, b, true, false);
  EXPECT_EQ(std::vector<float>(ct.values().begin(), ct.values().end()), (std::vector<float>{26, 30, 38, 44}));
}

TEST(Ops, LinearGradients) {
  expect_gradients([](const auto& x) { return ops::linear(x[0], x[1], x[2]); },
                   {random_tensor({2, 3, 4}, rng()), random_tensor({5, 4}, rng()), random_tensor({5}, rng())});
}

TEST(Ops, ShapeOpGradients) {
  expect_gradients([](const auto& x) { return ops::permute(x[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, rng())});
  expect_gradients([](const auto& x) { return ops::concat({x[0], x[1]}, 1); },
                   {random_tensor({2, 3, 2}, rng()), random_tensor({2, 1, 2}, rng())});
  expect_gradients([](const auto& x) { return ops::slice(x[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng())});
  const std::vector<std::int64_t> rows{2, 0, 2, 1};
  expect_gradients([&](const auto& x) { return ops::gather_rows(x[0], rows); }, {random_tensor({3, 2}, rng())});
  expect_gradients([&](const auto& x) { return ops::scatter_rows(x[0], rows, 5); }, {random_tensor({4, 2}, rng())});
}

TEST(Ops, PermuteMatchesIndexing) {
  Tensor x = random_tensor({2, 3, 4}, rng());
  Tensor y = ops::permute(x, {1, 2, 0});
  ASSERT_EQ(y.shape(), (Shape{3, 4, 2}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) EXPECT_EQ(y.data()[(j * 4 + k) * 2 + i], x.data()[(i * 3 + j) * 4 + k]);
}

TEST(Ops, NormalizationGradients) {
  expect_gradients([](const auto& x) { return ops::softmax_lastdim(x[0]); }, {random_tensor({3, 5}, rng(), -2, 2)});
  expect_gradients([](const auto& x) { return ops::layer_norm(x[0], x[1], x[2]); },
                   {random_tensor({3, 6}, rng()), random_tensor({6}, rng()), random_tensor({6}, rng())});
  expect_gradients([](const auto& x) { return ops::rms_norm(x[0], x[1]); },
                   {random_tensor({3, 6}, rng()), random_tensor({6}, rng())});
  expect_gradients([](const auto& x) { return ops::l2_normalize(x[0]); }, {random_tensor({3, 6}, rng())});
}

TEST(Ops, RmsNormAnalytic) {
  Tensor x = Tensor::from_data({2}, {3, 4});
  Tensor y = ops::rms_norm(x, Tensor::full({2}, 1.0f), 1e-12f);
  EXPECT_NEAR(y.data()[0], 3.0 / std::sqrt(12.5), 1e-6);
  EXPECT_NEAR(y.data()[1], 4.0 / std::sqrt(12.5), 1e-6);
  Tensor z = ops::rms_norm(Tensor::zeros({4}), Tensor::full({4}, 2.0f));
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Ops, SpaceDepthRoundTrip) {
  Tensor x = random_tensor({2, 4, 6, 3}, rng());
  Tensor y = ops::depth_to_space(ops::space_to_depth(x, 2), 2);
  EXPECT_EQ(tessera::testing::max_abs_diff(x, y), 0.0);
  expect_gradients([](const auto& v) { return ops::space_to_depth(v[0], 2); }, {random_tensor({1, 4, 4, 2}, rng())});
}

TEST(Ops, Conv2dMatchesDirectSum) {
  Tensor x = random_tensor({2, 5, 6, 3}, rng());
  Tensor w = random_tensor({3, 3, 3, 4}, rng());
  Tensor b = random_tensor({4}, rng());
  Tensor y = ops::conv2d(x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 6, 4}));
  for (int n = 0; n < 2; ++n)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 6; ++ox)
        for (int co = 0; co < 4; ++co) {
          double acc = b.data()[co];
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
              for (int ci = 0; ci < 3; ++ci)
                acc += double(x.data()[((n * 5 + iy) * 6 + ix) * 3 + ci]) * w.data()[((ky * 3 + kx) * 3 + ci) * 4 + co];
            }
          EXPECT_NEAR(y.data()[((n * 5 + oy) * 6 + ox) * 4 + co], acc, 1e-5);
        }
}

TEST(Ops, Conv2dGradients) {
  expect_gradients([](const auto& x) { return ops::conv2d(x[0], x[1], x[2], 1, 1); },
                   {random_tensor({2, 4, 5, 2}, rng()), random_tensor({3, 3, 2, 3}, rng()), random_tensor({3}, rng())});
  expect_gradients([](const auto& x) { return ops::conv2d(x[0], x[1], x[2], 2, 0); },
                   {random_tensor({1, 4, 4, 2}, rng()), random_tensor({2, 2, 2, 3}, rng()), random_tensor({3}, rng())});
}

TEST(Autograd, SharedInputAccumulates) {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad();
  Tensor y = ops::sum(ops::mul(x, x));
  y.backward();
  EXPECT_FLOAT_EQ(x.grad().data()[2], 6.0f);
}

TEST(Autograd, NoGradRecordsNothing) {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad();
  NoGradGuard ng;
  Tensor y = ops::exp(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Precision, HalfRoundingAndAccounting) {
  auto& tracker = MemoryTracker::instance();
  const auto before = tracker.stats(Domain::device).current;
  PrecisionGuard fp16(DType::f16);
  Tensor x = Tensor::full({1000}, 0.1f);
  EXPECT_EQ(tracker.stats(Domain::device).current - before, 2000u);
  EXPECT_EQ(x.data()[0], round_to_half(0.1f));
  EXPECT_NE(x.data()[0], 0.1f);
}

TEST(Memory, BudgetThrowsOutOfMemory) {
  ScopedDeviceBudget budget(MemoryTracker::instance().stats(Domain::device).current + 1024);
  EXPECT_THROW(Tensor::zeros({1024}), OutOfMemory);
  EXPECT_NO_THROW(Tensor::zeros({16}));
}
