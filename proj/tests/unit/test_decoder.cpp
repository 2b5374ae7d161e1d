#include "tessera/decoder.hpp"

#include "test_support.hpp"

using namespace tessera;
using tessera::testing::max_abs_diff;
using tessera::testing::random_tensor;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.patch_size = 32;
  c.embed_dim = 8;
  c.stage_depths = {1, 1};
  c.num_heads = {1, 2};
  c.window_size = 4;
  return c;
}

struct Inputs {
  GlobalSequence seq;
  SkipCache skips;
};

Inputs random_inputs(const EncoderConfig& e, std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  const std::int64_t ts = e.token_spatial();
  in.seq.num_patches = n;
  in.seq.token_spatial = ts;
  in.seq.grid_rows = 1;
  in.seq.grid_cols = n;
  in.seq.tokens = random_tensor({n * ts * ts, e.token_dim()}, rng);
  for (std::int64_t s = 0; s < e.num_stages(); ++s)
    in.skips.stages.push_back(random_tensor({n, e.stage_spatial(s), e.stage_spatial(s), e.stage_dim(s)}, rng));
  return in;
}

}  // namespace

TEST(Decoder, OutputShapeAndRange) {
  const EncoderConfig e = small_encoder();
  DecoderConfig d;
  Rng rng(1);
  Decoder dec(e, d, rng);
  Inputs in = random_inputs(e, 5, 2);
  in.seq.tokens = ops::mul_scalar(in.seq.tokens, 100.0f);
  NoGradGuard ng;
  const Tensor out = decode_patches(dec, in.seq, in.skips, 2);
  EXPECT_EQ(out.shape(), (Shape{5, 32, 32, 3}));
  EXPECT_EQ(out.domain(), Domain::host);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    ASSERT_GE(out.data()[i], 0.0f);
    ASSERT_LE(out.data()[i], 1.0f);
  }
}

TEST(Decoder, MiniBatchSizeDoesNotChangeOutput) {
  const EncoderConfig e = small_encoder();
  Rng rng(3);
  Decoder dec(e, DecoderConfig{}, rng);
  const Inputs in = random_inputs(e, 5, 4);
  NoGradGuard ng;
  const Tensor a = decode_patches(dec, in.seq, in.skips, 1);
  EXPECT_LE(max_abs_diff(a, decode_patches(dec, in.seq, in.skips, 3)), 1e-5);
  EXPECT_LE(max_abs_diff(a, decode_patches(dec, in.seq, in.skips, 8)), 1e-5);
}

TEST(Decoder, ZeroHeadEmitsClampedBias) {
  const EncoderConfig e = small_encoder();
  DecoderConfig d;
  d.head_channels = 4;
  Rng rng(5);
  Decoder dec(e, d, rng);
  dec.head().weight = Tensor::zeros(dec.head().weight.shape());
  dec.head().bias = Tensor::from_data({3}, {0.2f, -0.5f, 1.7f});
  const Inputs in = random_inputs(e, 2, 6);
  NoGradGuard ng;
  const Tensor out = decode_patches(dec, in.seq, in.skips);
  for (std::int64_t i = 0; i < out.numel(); i += 3) {
    ASSERT_EQ(out.data()[i], 0.2f);
    ASSERT_EQ(out.data()[i + 1], 0.0f);
    ASSERT_EQ(out.data()[i + 2], 1.0f);
  }
}

TEST(Decoder, PatchExpandMatchesIndexOracle) {
  Rng rng(7);
  const std::int64_t cin = 3, cout = 2;
  const int s = 2;
  nn::Linear proj(cin, cout * s * s, rng);
  const Tensor x = random_tensor({2, 3, 4, cin}, rng);
  const Tensor y = patch_expand(x, proj, s);
  ASSERT_EQ(y.shape(), (Shape{2, 6, 8, cout}));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 6; ++i)
      for (std::int64_t j = 0; j < 8; ++j)
        for (std::int64_t c = 0; c < cout; ++c) {
          const std::int64_t row = ((i % s) * s + j % s) * cout + c;
          double want = proj.bias.data()[row];
          for (std::int64_t k = 0; k < cin; ++k)
            want += double(proj.weight.data()[row * cin + k]) * x.data()[((b * 3 + i / s) * 4 + j / s) * cin + k];
          ASSERT_NEAR(y.data()[((b * 6 + i) * 8 + j) * cout + c], want, 1e-5);
        }

  // A unit impulse at one input pixel fills exactly its s x s output block.
  nn::Linear nobias;
  nobias.weight = Tensor::full({cout * s * s, cin}, 1.0f);
  Tensor delta = Tensor::zeros({1, 3, 4, cin});
  delta.data()[(1 * 4 + 2) * cin] = 1.0f;
  const Tensor spread = patch_expand(delta, nobias, s);
  for (std::int64_t i = 0; i < 6; ++i)
    for (std::int64_t j = 0; j < 8; ++j) {
      const bool inside = i / s == 1 && j / s == 2;
      for (std::int64_t c = 0; c < cout; ++c) ASSERT_EQ(spread.data()[(i * 8 + j) * cout + c], inside ? 1.0f : 0.0f);
    }
  const Tensor zeros = patch_expand(Tensor::zeros({1, 3, 4, cin}), nobias, s);
  for (std::int64_t i = 0; i < zeros.numel(); ++i) ASSERT_EQ(zeros.data()[i], 0.0f);
}

TEST(Decoder, SkipsReachTheOutput) {
  const EncoderConfig e = small_encoder();
  Rng rng(9);
  Decoder dec(e, DecoderConfig{}, rng);
  Inputs in = random_inputs(e, 1, 10);
  NoGradGuard ng;
  const Tensor ref = decode_patches(dec, in.seq, in.skips);
  for (std::size_t s = 0; s < in.skips.stages.size(); ++s) {
    Inputs moved = in;
    moved.skips.stages[s] = ops::add(in.skips.stages[s], random_tensor(in.skips.stages[s].shape(), rng));
    EXPECT_GT(max_abs_diff(decode_patches(dec, moved.seq, moved.skips), ref), 2e-6) << "stage " << s;
  }
}

TEST(Decoder, RejectsMissingSkipsAndBadProvenance) {
  const EncoderConfig e = small_encoder();
  Rng rng(11);
  Decoder dec(e, DecoderConfig{}, rng);
  const Inputs in = random_inputs(e, 3, 12);
  NoGradGuard ng;
  Inputs bad = in;
  bad.skips.stages.pop_back();
  EXPECT_THROW(decode_patches(dec, bad.seq, bad.skips), std::invalid_argument);
  bad = in;
  bad.skips.stages[0] = ops::slice(in.skips.stages[0], 0, 0, 2);
  EXPECT_THROW(decode_patches(dec, bad.seq, bad.skips), std::invalid_argument);
  bad = in;
  bad.seq.num_patches = 4;
  EXPECT_THROW(decode_patches(dec, bad.seq, bad.skips), std::invalid_argument);
}

TEST(Decoder, Validation) {
  const EncoderConfig e = small_encoder();
  EXPECT_TRUE(validate_config(DecoderConfig{}, e).empty());
  DecoderConfig d;
  d.upsample_kind = "bilinear";
  EXPECT_FALSE(validate_config(d, e).empty());
  d = DecoderConfig{};
  d.stage_depths = {1, 1, 1};
  EXPECT_FALSE(validate_config(d, e).empty());
  d = DecoderConfig{};
  d.mini_batch_size = 0;
  EXPECT_FALSE(validate_config(d, e).empty());
  Rng rng(13);
  EXPECT_THROW(Decoder(e, d, rng), std::invalid_argument);
}

TEST(Decoder, Gradients) {
  const EncoderConfig e = small_encoder();
  DecoderConfig d;
  d.head_channels = 4;
  Rng rng(14);
  Decoder dec(e, d, rng);
  dec.head().bias = Tensor::full({3}, 0.5f);
  const Inputs in = random_inputs(e, 1, 15);
  const Tensor tokens = unflatten_tokens(in.seq).tokens;
  tessera::testing::expect_gradients(
      [&](const std::vector<Tensor>& x) { return dec.forward(x[0], {x[1], in.skips.stages[1]}); },
      {tokens.clone(), in.skips.stages[0].clone()}, 3e-2, 1e-2);
}
