#include "tessera/bottleneck.hpp"

#include <cmath>

#include "tessera/memory.hpp"
#include "test_support.hpp"

using namespace tessera;
using tessera::testing::max_abs_diff;
using tessera::testing::random_tensor;

namespace {

BottleneckConfig small_bottleneck(std::int64_t dim = 16, AttentionMode mode = AttentionMode::exact) {
  BottleneckConfig c;
  c.depth = 2;
  c.num_heads = 2;
  c.token_dim = dim;
  c.attention_mode = mode;
  c.max_grid = 16;
  return c;
}

GlobalSequence sequence(std::int64_t rows, std::int64_t cols, std::int64_t ts, std::int64_t dim, std::uint64_t seed) {
  Rng rng(seed);
  GlobalSequence g;
  g.num_patches = rows * cols;
  g.token_spatial = ts;
  g.grid_rows = rows;
  g.grid_cols = cols;
  g.tokens = random_tensor({rows * cols * ts * ts, dim}, rng);
  return g;
}

}  // namespace

TEST(Bottleneck, RmsNormalizeExamples) {
  const Tensor x = Tensor::from_data({2, 2}, {3.0f, 4.0f, 0.0f, 0.0f});
  const Tensor y = rms_normalize(x, Tensor::from_data({2}, {1.0f, 2.0f}), 1e-12f);
  const double r = std::sqrt(12.5);
  EXPECT_NEAR(y.data()[0], 3.0 / r, 1e-6);
  EXPECT_NEAR(y.data()[1], 2.0 * 4.0 / r, 1e-6);
  EXPECT_EQ(y.data()[2], 0.0f);
  EXPECT_EQ(y.data()[3], 0.0f);
  Rng rng(1);
  const Tensor z = random_tensor({5, 8}, rng);
  const Tensor n = rms_normalize(z, Tensor::full({8}, 1.0f), 1e-8f);
  for (std::int64_t i = 0; i < 5; ++i) {
    double ms = 0.0;
    for (std::int64_t j = 0; j < 8; ++j) ms += double(n.data()[i * 8 + j]) * n.data()[i * 8 + j];
    EXPECT_NEAR(ms / 8.0, 1.0, 1e-4);
  }
  EXPECT_THROW(rms_normalize(z, Tensor::full({8}, 1.0f), 0.0f), std::invalid_argument);
}

TEST(Bottleneck, FlattenOrderAndRoundTrip) {
  Rng rng(2);
  TokenSequence seq{random_tensor({6, 2, 2, 4}, rng), 2, 3};
  const GlobalSequence g = flatten_tokens(seq);
  EXPECT_EQ(g.total_tokens(), 24);
  EXPECT_EQ(g.patch_index(13), 3);
  EXPECT_EQ(g.intra_position(13), 1);
  for (std::int64_t i = 0; i < 4; ++i) EXPECT_EQ(g.tokens.data()[13 * 4 + i], seq.tokens.data()[(3 * 4 + 1) * 4 + i]);
  const TokenSequence back = unflatten_tokens(g);
  EXPECT_EQ(back.tokens.shape(), seq.tokens.shape());
  EXPECT_EQ(max_abs_diff(back.tokens, seq.tokens), 0.0);
  EXPECT_EQ(back.grid_cols, 3);
}

TEST(Bottleneck, ZeroBranchesAreIdentity) {
  BottleneckConfig c = small_bottleneck();
  c.positional_embedding = "none";
  Rng rng(3);
  Bottleneck b(c, 2, rng);
  for (auto& blk : b.blocks()) {
    blk.proj.weight = Tensor::zeros(blk.proj.weight.shape());
    blk.proj.bias = Tensor::zeros(blk.proj.bias.shape());
    blk.down.weight = Tensor::zeros(blk.down.weight.shape());
  }
  const GlobalSequence in = sequence(2, 2, 2, 16, 4);
  NoGradGuard ng;
  EXPECT_EQ(max_abs_diff(b.forward(in).tokens, in.tokens), 0.0);
}

TEST(Bottleneck, FiniteOutputAtThousandTokens) {
  Rng rng(5);
  Bottleneck b(small_bottleneck(32, AttentionMode::approximate), 4, rng);
  const GlobalSequence in = sequence(8, 8, 4, 32, 6);
  ASSERT_EQ(in.total_tokens(), 1024);
  NoGradGuard ng;
  const GlobalSequence out = b.forward(in);
  EXPECT_EQ(out.tokens.shape(), in.tokens.shape());
  EXPECT_EQ(out.grid_rows, 8);
  for (std::int64_t i = 0; i < out.tokens.numel(); ++i) ASSERT_TRUE(std::isfinite(out.tokens.data()[i]));
}

TEST(Bottleneck, ApproximateTracksExact) {
  for (std::int64_t rows : {8, 16}) {
    BottleneckConfig exact = small_bottleneck(32, AttentionMode::exact);
    BottleneckConfig approx = small_bottleneck(32, AttentionMode::approximate);
    approx.approx.block_size = 32;
    approx.approx.routed_blocks = 4;
    Rng r1(7), r2(7);
    Bottleneck be(exact, 4, r1), ba(approx, 4, r2);
    const GlobalSequence in = sequence(rows, 4, 4, 32, 8);
    NoGradGuard ng;
    const double diff = max_abs_diff(be.forward(in).tokens, ba.forward(in).tokens);
    EXPECT_LE(diff, 5e-2) << in.total_tokens() << " tokens";
  }
}

TEST(Bottleneck, EveryTokenSeesEveryPatch) {
  Rng rng(9);
  Bottleneck b(small_bottleneck(), 2, rng);
  GlobalSequence in = sequence(3, 3, 2, 16, 10);
  NoGradGuard ng;
  const Tensor ref = b.forward(in).tokens;
  in.tokens = in.tokens.clone();
  for (std::int64_t i = 0; i < 16; ++i) in.tokens.data()[i] += 1.0f;  // first token of patch 0
  const Tensor moved = b.forward(in).tokens;
  for (std::int64_t p = 1; p < 9; ++p) {
    double d = 0.0;
    for (std::int64_t i = p * 4 * 16; i < (p + 1) * 4 * 16; ++i) d = std::max(d, std::fabs(double(moved.data()[i]) - ref.data()[i]));
    EXPECT_GT(d, 1e-6) << "patch " << p;
  }
}

TEST(Bottleneck, ChunkedInferenceMatchesSinglePass) {
  BottleneckConfig c = small_bottleneck();
  Rng rng(11);
  Bottleneck whole(c, 2, rng);
  c.token_chunk = 7;
  c.attention_chunk = 5;
  Rng rng2(11);
  Bottleneck chunked(c, 2, rng2);
  const GlobalSequence in = sequence(3, 4, 2, 16, 12);
  const Tensor with_grad = whole.forward(in).tokens;
  NoGradGuard ng;
  EXPECT_LE(max_abs_diff(chunked.forward(in).tokens, with_grad), 1e-5);
}

TEST(Bottleneck, Gradients) {
  BottleneckConfig c = small_bottleneck(8);
  c.depth = 1;
  Rng rng(13);
  Bottleneck b(c, 2, rng);
  const GlobalSequence in = sequence(2, 2, 2, 8, 14);
  tessera::testing::expect_gradients(
      [&](const std::vector<Tensor>& x) {
        GlobalSequence g = in;
        g.tokens = x[0];
        return b.forward(g).tokens;
      },
      {in.tokens.clone()}, 2e-2, 1e-2);
}

TEST(Bottleneck, RejectsInconsistentSequences) {
  Rng rng(15);
  Bottleneck b(small_bottleneck(), 2, rng);
  NoGradGuard ng;
  GlobalSequence in = sequence(2, 2, 2, 16, 16);
  GlobalSequence bad = in;
  bad.grid_cols = 3;
  EXPECT_THROW(b.forward(bad), std::invalid_argument);
  bad = sequence(2, 2, 2, 8, 16);
  EXPECT_THROW(b.forward(bad), std::invalid_argument);
  bad = sequence(2, 2, 3, 16, 16);
  EXPECT_THROW(b.forward(bad), std::invalid_argument);
  bad = sequence(1, 17, 2, 16, 16);
  EXPECT_THROW(b.forward(bad), std::invalid_argument);

  BottleneckConfig c = small_bottleneck();
  c.num_heads = 3;
  EXPECT_FALSE(validate_config(c).empty());
  EXPECT_THROW(Bottleneck(c, 2, rng), std::invalid_argument);
  c = small_bottleneck();
  c.token_dim = 0;
  EXPECT_FALSE(validate_config(c).empty());
}

TEST(Bottleneck, ApproximateMemoryGrowsSubquadratically) {
  BottleneckConfig c = small_bottleneck(32, AttentionMode::approximate);
  c.max_grid = 64;
  Rng rng(17);
  Bottleneck b(c, 4, rng);
  auto& mt = MemoryTracker::instance();
  auto peak = [&](std::int64_t side) {
    NoGradGuard ng;
    const GlobalSequence in = sequence(side, side, 4, 32, 18);
    mt.reset_peak(Domain::device);
    const std::size_t base = mt.stats(Domain::device).current;
    b.forward(in);
    return double(mt.stats(Domain::device).peak - base);
  };
  const double small = peak(16);  // 4096 tokens
  const double large = peak(32);  // 16384 tokens
  EXPECT_LE(large / small, 4.4);
}
