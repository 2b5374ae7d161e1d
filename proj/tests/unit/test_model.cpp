#include "tessera/model.hpp"

#include <algorithm>

#include "tessera/memory.hpp"
#include "test_support.hpp"

using namespace tessera;

namespace {

ImageTensor random_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  ImageTensor img(h, w, 3);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

double max_diff(const ImageTensor& a, const ImageTensor& b) {
  EXPECT_TRUE(a.same_dims(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(double(a.data[i]) - b.data[i]));
  return m;
}

}  // namespace

TEST(Model, ToyConfigIsValid) {
  const ModelConfig c = toy_config();
  EXPECT_TRUE(validate_config(c).empty());
  EXPECT_EQ(c.bottleneck.token_dim, 64);
  EXPECT_EQ(c.encoder.token_spatial(), 4);
}

TEST(Model, ValidationCoversCrossModuleFields) {
  ModelConfig c = toy_config();
  c.bottleneck.token_dim = 32;
  auto v = validate_config(c);
  EXPECT_TRUE(std::any_of(v.begin(), v.end(), [](const std::string& s) { return s.rfind("bottleneck.token_dim", 0) == 0; }));
  c = toy_config();
  c.decoder.out_channels = 1;
  v = validate_config(c);
  EXPECT_TRUE(std::any_of(v.begin(), v.end(), [](const std::string& s) { return s.rfind("decoder.out_channels", 0) == 0; }));
  c = toy_config();
  c.encoder.mini_batch_size = 0;
  v = validate_config(c);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().rfind("encoder.mini_batch_size", 0), 0u);
  EXPECT_THROW(DehazeModel{c}, std::invalid_argument);
}

TEST(Model, PreservesArbitraryDimensions) {
  const DehazeModel m(toy_config());
  for (auto [h, w] : {std::pair{1000, 1000}, std::pair{37, 250}}) {
    const ImageTensor out = m.dehaze(random_image(h, w, 1));
    EXPECT_EQ(out.height, h);
    EXPECT_EQ(out.width, w);
    EXPECT_EQ(out.channels, 3);
    for (float v : out.data) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Model, MiniBatchSizeDoesNotChangeOutput) {
  const DehazeModel m(toy_config());
  const ImageTensor img = random_image(300, 200, 2);
  RuntimeOptions one;
  one.encoder_mini_batch = 1;
  one.decoder_mini_batch = 1;
  RuntimeOptions eight;
  eight.encoder_mini_batch = 8;
  eight.decoder_mini_batch = 8;
  EXPECT_LE(max_diff(m.dehaze(img, one), m.dehaze(img, eight)), 1e-5);
}

TEST(Model, HalfPrecisionStaysCloseToFloat) {
  const DehazeModel full(toy_config());
  DehazeModel half = full.clone();
  half.set_precision(DType::f16);
  EXPECT_EQ(half.config().precision, DType::f16);
  const ImageTensor img = random_image(128, 192, 3);
  EXPECT_LE(max_diff(full.dehaze(img), half.dehaze(img)), 2e-2);
}

TEST(Model, ZeroHeadGivesConstantImage) {
  DehazeModel m(toy_config());
  auto& head = m.decoder().head();
  head.weight = Tensor::zeros(head.weight.shape());
  head.bias = Tensor::from_data({3}, {0.25f, 0.5f, 0.75f});
  const ImageTensor out = m.dehaze(random_image(100, 130, 4));
  for (std::int64_t i = 0; i < out.height * out.width; ++i) {
    ASSERT_EQ(out.data[i * 3], 0.25f);
    ASSERT_EQ(out.data[i * 3 + 1], 0.5f);
    ASSERT_EQ(out.data[i * 3 + 2], 0.75f);
  }
}

TEST(Model, ReportsStagesInOrder) {
  const DehazeModel m(toy_config());
  std::vector<StageReport> reports;
  RuntimeOptions opts;
  opts.on_stage = [&](const StageReport& r) { reports.push_back(r); };
  m.dehaze(random_image(128, 128, 5), opts);
  ASSERT_EQ(reports.size(), 5u);
  const char* names[] = {"partition", "encode", "bottleneck", "decode", "reassemble"};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(reports[i].stage, names[i]);
  EXPECT_GT(reports[1].device_peak, 0u);
  EXPECT_GT(reports[0].host_peak, 0u);
}

TEST(Model, BudgetOverrunNamesTheStage) {
  const DehazeModel m(toy_config());
  const ImageTensor img = random_image(256, 256, 6);
  ScopedDeviceBudget budget(64 * 1024);
  try {
    m.dehaze(img);
    FAIL() << "expected StageOutOfMemory";
  } catch (const StageOutOfMemory& e) {
    EXPECT_EQ(e.stage(), "encode");
    EXPECT_EQ(e.token_count(), 16 * 16);
    EXPECT_EQ(e.budget(), 64u * 1024u);
    EXPECT_GT(e.requested(), 0u);
    EXPECT_NE(std::string(e.what()).find("encode"), std::string::npos);
  }
}

TEST(Model, SeedDeterminesWeightsAndOutput) {
  const ModelConfig c = toy_config();
  const DehazeModel a(c), b(c);
  EXPECT_EQ(a.checksum(), b.checksum());
  const ImageTensor img = random_image(64, 96, 7);
  EXPECT_EQ(a.dehaze(img).data, b.dehaze(img).data);
  ModelConfig other = c;
  other.seed = 1;
  EXPECT_NE(DehazeModel(other).checksum(), a.checksum());
}

TEST(Model, CloneIsIndependent) {
  const DehazeModel a(toy_config());
  DehazeModel b = a.clone();
  EXPECT_EQ(a.checksum(), b.checksum());
  b.parameters().front().second->data()[0] += 1.0f;
  EXPECT_NE(a.checksum(), b.checksum());
}

TEST(Model, RejectsWrongChannelCount) {
  const DehazeModel m(toy_config());
  EXPECT_THROW(m.dehaze(ImageTensor(64, 64, 1)), std::invalid_argument);
}

TEST(Model, ForwardCarriesGradientsToInputAndWeights) {
  DehazeModel m(toy_config());
  m.decoder().head().bias = Tensor::full({3}, 0.5f);
  m.decoder().head().bias.set_requires_grad();
  Tensor x = random_image(64, 64, 8).to_tensor();
  x.set_requires_grad();
  Tensor loss = ops::sum(m.forward(x));
  loss.backward();
  ASSERT_TRUE(x.grad().defined());
  double g = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) g += std::fabs(x.grad().data()[i]);
  EXPECT_GT(g, 0.0);
  std::size_t with_grad = 0;
  for (auto& [name, t] : m.parameters()) with_grad += t->grad().defined();
  EXPECT_EQ(with_grad, m.parameters().size());
}
