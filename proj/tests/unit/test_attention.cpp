#include "tessera/attention.hpp"

#include <cmath>

#include "test_support.hpp"

using namespace tessera;
using tessera::testing::max_abs_diff;
using tessera::testing::random_tensor;

namespace {

struct Qkv {
  Tensor q, k, v;
};

// Unit-norm tokens drawn around `clusters` centers, queries == keys, scaled so
// the post-1/sqrt(d) logits span [-scale^2, scale^2].
Qkv clustered_tokens(std::int64_t n, std::int64_t d, int clusters, double spread, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> centers(static_cast<std::size_t>(clusters * d));
  for (auto& c : centers) c = rng.normal();
  std::vector<float> x(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(clusters)));
    double norm = 0.0;
    std::vector<double> row(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < d; ++j) {
      row[static_cast<std::size_t>(j)] = centers[static_cast<std::size_t>(c * d + j)] + spread * rng.normal();
      norm += row[static_cast<std::size_t>(j)] * row[static_cast<std::size_t>(j)];
    }
    const double s = scale * std::pow(double(d), 0.25) / std::sqrt(norm);
    for (std::int64_t j = 0; j < d; ++j) x[static_cast<std::size_t>(i * d + j)] = static_cast<float>(row[static_cast<std::size_t>(j)] * s);
  }
  std::vector<float> mix(static_cast<std::size_t>(d * d));
  for (auto& m : mix) m = static_cast<float>(rng.normal());
  Tensor t = Tensor::from_data({n, d}, x);
  Tensor v = ops::matmul(t, Tensor::from_data({d, d}, mix));
  return {t, t, v};
}

double relative_frobenius(const Tensor& a, const Tensor& ref) {
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < ref.numel(); ++i) {
    const double e = double(a.data()[i]) - ref.data()[i];
    num += e * e;
    den += double(ref.data()[i]) * ref.data()[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Attention, ExactMatchesNaiveSoftmax) {
  Rng rng(3);
  Tensor q = random_tensor({5, 4}, rng), k = random_tensor({7, 4}, rng), v = random_tensor({7, 3}, rng);
  Tensor out = exact_attention(q, k, v);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> s(7);
    double mx = -1e300, tot = 0.0;
    for (int j = 0; j < 7; ++j) {
      double dot = 0.0;
      for (int c = 0; c < 4; ++c) dot += double(q.data()[i * 4 + c]) * k.data()[j * 4 + c];
      s[j] = dot / 2.0;
      mx = std::max(mx, s[j]);
    }
    for (auto& x : s) tot += (x = std::exp(x - mx));
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int j = 0; j < 7; ++j) acc += s[j] / tot * v.data()[j * 3 + c];
      EXPECT_NEAR(out.data()[i * 3 + c], acc, 1e-6);
    }
  }
}

TEST(Attention, QueryChunkingMatchesSinglePass) {
  Rng rng(4);
  Tensor q = random_tensor({300, 8}, rng), k = random_tensor({300, 8}, rng), v = random_tensor({300, 8}, rng);
  EXPECT_LE(max_abs_diff(exact_attention(q, k, v), exact_attention(q, k, v, 64)), 1e-6);
  ApproxParams p;
  EXPECT_LE(max_abs_diff(approximate_attention(q, k, v, p), approximate_attention(q, k, v, p, 64)), 1e-5);
}

TEST(Attention, FallbackIsBitIdentical) {
  Rng rng(5);
  ApproxParams p;
  Tensor q = random_tensor({64, 16}, rng), k = random_tensor({64, 16}, rng), v = random_tensor({64, 16}, rng);
  Tensor a = approximate_attention(q, k, v, p);
  Tensor e = exact_attention(q, k, v);
  EXPECT_EQ(max_abs_diff(a, e), 0.0);
}

TEST(Attention, UniformKeysAverageValues) {
  Rng rng(6);
  const std::int64_t n = 1000, d = 16;
  Tensor q = random_tensor({n, d}, rng);
  Tensor k = ops::add(Tensor::zeros({n, d}), random_tensor({1, d}, rng));
  Tensor v = random_tensor({n, 8}, rng);
  Tensor mean = ops::mean_axis(v, 0);
  for (const Tensor& out : {exact_attention(q, k, v), approximate_attention(q, k, v, ApproxParams{})}) {
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < 8; ++c) EXPECT_NEAR(out.data()[i * 8 + c], mean.data()[c], 1e-5);
  }
}

TEST(Attention, ApproximationErrorOnClusteredTokens) {
  struct Case {
    int clusters;
    double spread, scale;
  };
  for (std::int64_t n : {512, 1024, 2048, 4096}) {
    for (std::int64_t d : {16, 32}) {
      for (Case c : {Case{32, 0.3, 3.0}, Case{16, 0.5, 2.0}, Case{8, 0.3, 1.0}, Case{128, 0.3, 3.0}}) {
        auto t = clustered_tokens(n, d, c.clusters, c.spread, c.scale, 100 + n + d + c.clusters);
        const double err = relative_frobenius(approximate_attention(t.q, t.k, t.v, ApproxParams{}, 256),
                                              exact_attention(t.q, t.k, t.v, 256));
        std::printf("n=%ld d=%ld clusters=%d spread=%.1f scale=%.1f rel=%.4f\n", long(n), long(d), c.clusters,
                    c.spread, c.scale, err);
        EXPECT_LE(err, 0.1);
      }
    }
  }
}

TEST(Attention, ApproximateGradients) {
  Rng rng(8);
  auto t = clustered_tokens(200, 8, 8, 0.3, 1.5, 9);
  ApproxParams p;
  p.block_size = 16;
  p.routed_blocks = 4;
  p.low_rank = 0;
  p.moment_clip = 100.0f;
  tessera::testing::expect_gradients(
      [&](const auto& x) { return approximate_attention(x[0], x[1], x[2], p); }, {t.q.clone(), t.k.clone(), t.v.clone()},
      5e-2, 1e-3);
}
