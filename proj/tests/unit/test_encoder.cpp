#include "tessera/encoder.hpp"

#include <algorithm>
#include <numeric>

#include "tessera/memory.hpp"
#include "test_support.hpp"

using namespace tessera;
using tessera::testing::max_abs_diff;

namespace {

EncoderConfig small_encoder(std::int64_t patch = 64) {
  EncoderConfig c;
  c.patch_size = patch;
  c.embed_dim = 8;
  c.stage_depths = {1, 1, 1};
  c.num_heads = {1, 2, 2};
  c.window_size = 4;
  c.mini_batch_size = 4;
  return c;
}

ImageTensor random_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  ImageTensor img(h, w, 3);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

std::pair<TokenSequence, SkipCache> run(const Encoder& enc, const ImageTensor& img, std::int64_t mb = 0) {
  NoGradGuard ng;
  PatchBatch batch;
  {
    DomainGuard host(Domain::host);
    batch = partition(img, enc.config().patch_size);
  }
  return encode_patches(enc, batch, mb);
}

}  // namespace

TEST(Encoder, TokenGridForFourStagePatch256) {
  EncoderConfig c;
  c.patch_size = 256;
  c.embed_dim = 4;
  c.stage_depths = {1, 0, 0, 1};
  c.num_heads = {1, 1, 1, 1};
  c.window_size = 8;
  c.mini_batch_size = 4;
  ASSERT_TRUE(validate_config(c).empty());
  Rng rng(1);
  Encoder enc(c, rng);
  const auto [seq, skips] = run(enc, random_image(1024, 1024, 2));
  EXPECT_EQ(seq.tokens.shape(), (Shape{16, 8, 8, c.token_dim()}));
  EXPECT_EQ(c.token_dim(), 32);
  EXPECT_EQ(seq.grid_rows, 4);
  EXPECT_EQ(seq.grid_cols, 4);
  ASSERT_EQ(skips.stages.size(), 4u);
  EXPECT_EQ(skips.stages[0].shape(), (Shape{16, 64, 64, 4}));
  EXPECT_EQ(skips.stages[3].shape(), (Shape{16, 8, 8, 32}));
  EXPECT_EQ(skips.stages[0].domain(), Domain::host);
  EXPECT_EQ(seq.tokens.domain(), Domain::device);
}

TEST(Encoder, IdenticalPatchesGiveIdenticalTokens) {
  const EncoderConfig c = small_encoder();
  Rng rng(2);
  Encoder enc(c, rng);
  const ImageTensor tile = random_image(64, 64, 3);
  ImageTensor img(128, 192, 3);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = tile.at(y % 64, x % 64, ch);
  const auto [seq, skips] = run(enc, img);
  const std::int64_t row = seq.tokens.numel() / seq.num_patches();
  for (std::int64_t p = 1; p < seq.num_patches(); ++p)
    for (std::int64_t i = 0; i < row; ++i) ASSERT_EQ(seq.tokens.data()[p * row + i], seq.tokens.data()[i]);
}

TEST(Encoder, MiniBatchSizeDoesNotChangeTokens) {
  const EncoderConfig c = small_encoder();
  Rng rng(3);
  Encoder enc(c, rng);
  const ImageTensor img = random_image(200, 330, 4);
  const auto a = run(enc, img, 1);
  const auto b = run(enc, img, 3);
  const auto d = run(enc, img, 100);
  EXPECT_LE(max_abs_diff(a.first.tokens, b.first.tokens), 1e-5);
  EXPECT_LE(max_abs_diff(a.first.tokens, d.first.tokens), 1e-5);
  for (std::size_t s = 0; s < a.second.stages.size(); ++s)
    EXPECT_LE(max_abs_diff(a.second.stages[s], d.second.stages[s]), 1e-5);
}

TEST(Encoder, PermutingPatchesPermutesTokens) {
  const EncoderConfig c = small_encoder();
  Rng rng(4);
  Encoder enc(c, rng);
  NoGradGuard ng;
  const PatchBatch batch = partition(random_image(128, 192, 5), 64);
  std::vector<std::int64_t> order(static_cast<std::size_t>(batch.layout.num_patches()));
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::swap(order[0], order[2]);
  PatchBatch shuffled{ops::gather_rows(batch.patches, order), batch.layout};
  const auto ref = encode_patches(enc, batch, 2).first.tokens;
  const auto got = encode_patches(enc, shuffled, 2).first.tokens;
  EXPECT_LE(max_abs_diff(ops::gather_rows(ref, order), got), 1e-5);
}

TEST(Encoder, ConvolutionalBackbone) {
  EncoderConfig c = small_encoder();
  c.backbone = "cnn";
  ASSERT_TRUE(validate_config(c).empty());
  Rng rng(5);
  Encoder enc(c, rng);
  const auto [seq, skips] = run(enc, random_image(64, 128, 6));
  EXPECT_EQ(seq.tokens.shape(), (Shape{2, 4, 4, 32}));
  for (std::int64_t i = 0; i < seq.tokens.numel(); ++i) ASSERT_TRUE(std::isfinite(seq.tokens.data()[i]));
}

TEST(Encoder, ValidationNamesTheOffendingField) {
  auto has = [](const std::vector<std::string>& v, const std::string& field) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.rfind(field + ":", 0) == 0; });
  };
  EXPECT_TRUE(validate_config(encoder_preset("swin_t")).empty());
  EXPECT_TRUE(validate_config(encoder_preset("cnn")).empty());
  EncoderConfig c = small_encoder();
  c.mini_batch_size = 0;
  EXPECT_TRUE(has(validate_config(c), "mini_batch_size"));
  c = small_encoder();
  c.patch_size = 100;
  EXPECT_TRUE(has(validate_config(c), "patch_size"));
  c = small_encoder();
  c.num_heads = {3, 2, 2};
  EXPECT_TRUE(has(validate_config(c), "num_heads[0]"));
  c = small_encoder();
  c.backbone = "vit";
  EXPECT_TRUE(has(validate_config(c), "backbone"));
  c = small_encoder();
  c.num_heads = {1, 1};
  EXPECT_TRUE(has(validate_config(c), "num_heads"));
  EXPECT_THROW(encoder_preset("resnet"), std::invalid_argument);
}

TEST(Encoder, PatchSizeMismatchIsRejected) {
  Rng rng(6);
  Encoder enc(small_encoder(), rng);
  NoGradGuard ng;
  const PatchBatch batch = partition(random_image(64, 64, 7), 32);
  EXPECT_THROW(encode_patches(enc, batch), std::invalid_argument);
}

TEST(Encoder, DevicePeakGrowsWithRetainedTokensOnly) {
  const EncoderConfig c = small_encoder();
  Rng rng(7);
  Encoder enc(c, rng);
  auto& mt = MemoryTracker::instance();
  auto measure = [&](std::int64_t side) {
    NoGradGuard ng;
    PatchBatch batch;
    {
      DomainGuard host(Domain::host);
      batch = partition(random_image(side, side, 8), 64);
    }
    mt.reset_peak(Domain::device);
    const std::size_t base = mt.stats(Domain::device).current;
    auto out = encode_patches(enc, batch, 4);
    const std::size_t tokens = static_cast<std::size_t>(out.first.tokens.numel()) * 4;
    return std::pair{mt.stats(Domain::device).peak - base, tokens};
  };
  const auto [peak1, tok1] = measure(256);
  const auto [peak2, tok2] = measure(1024);
  EXPECT_EQ(tok2, 16 * tok1);
  EXPECT_LE(double(peak2) - double(peak1), 1.1 * (double(tok2) - double(tok1)));
}
