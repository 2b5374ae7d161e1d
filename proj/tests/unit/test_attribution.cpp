#include "tessera/attribution.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "tessera/haze.hpp"
#include "test_support.hpp"

using namespace tessera;
namespace fs = std::filesystem;

namespace {

ImageTensor random_image(std::int64_t h, std::int64_t w, std::int64_t c, std::uint64_t seed) {
  ImageTensor img(h, w, c);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

bool inside(const AttributionRegion& r, std::int64_t y, std::int64_t x, std::int64_t margin = 0) {
  return y >= r.y - margin && y < r.y + r.l + margin && x >= r.x - margin && x < r.x + r.l + margin;
}

const ImageFunction identity = [](const Tensor& x) { return ops::mul_scalar(x, 1.0f); };
const ImageFunction square = [](const Tensor& x) { return ops::square(x); };

}  // namespace

TEST(Attribution, DetectorSumsTheWindow) {
  ImageTensor img(6, 8, 3, 1.0f);
  EXPECT_DOUBLE_EQ(detector_response(img, {2, 1, 3}), 27.0);
  img.at(1, 2, 0) = 5.0f;  // row 1, column 2: inside
  img.at(2, 1, 0) = 5.0f;  // row 2, column 1: outside
  EXPECT_DOUBLE_EQ(detector_response(img, {2, 1, 3}), 31.0);
  EXPECT_NEAR(detector_response(img.to_tensor(), {2, 1, 3}).item(), 31.0, 1e-6);
  EXPECT_THROW(check_region({6, 0, 3}, 6, 8), std::invalid_argument);
  EXPECT_THROW(check_region({0, 4, 3}, 6, 8), std::invalid_argument);
  EXPECT_THROW(check_region({0, 0, 0}, 6, 8), std::invalid_argument);
  EXPECT_THROW(check_region({-1, 0, 2}, 6, 8), std::invalid_argument);
  EXPECT_NO_THROW(check_region({5, 3, 3}, 6, 8));
}

TEST(Attribution, IdentityModelClosedForm) {
  const ImageTensor hazy = random_image(9, 11, 3, 1);
  const ImageTensor base = random_image(9, 11, 3, 2);
  const AttributionRegion r{3, 2, 4};
  DamConfig cfg;
  cfg.steps = 20;
  cfg.channel_mode = ChannelMode::per_channel;
  const AttributionMap riemann = compute_dam(identity, hazy, base, r, cfg);
  cfg.weighting = StepWeighting::as_printed;
  const AttributionMap printed = compute_dam(identity, hazy, base, r, cfg);
  ASSERT_EQ(riemann.channels, 3);
  for (std::int64_t y = 0; y < 9; ++y)
    for (std::int64_t x = 0; x < 11; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        const auto i = static_cast<std::size_t>((y * 11 + x) * 3 + c);
        const double d = inside(r, y, x) ? double(hazy.data[i]) - base.data[i] : 0.0;
        ASSERT_NEAR(riemann.scores[i], d, 1e-5);
        ASSERT_NEAR(printed.scores[i], -d / 20.0, 1e-6);
      }
  EXPECT_NEAR(riemann.total(), riemann.detector_input - riemann.detector_baseline, 1e-4);
}

TEST(Attribution, RiemannErrorOnQuadraticMatchesOracle) {
  // D = sum x^2 over the window; right-endpoint sum = 2 d b + d^2 (m + 1) / m.
  const ImageTensor hazy = random_image(7, 7, 1, 3);
  const ImageTensor base = random_image(7, 7, 1, 4);
  const AttributionRegion r{1, 1, 5};
  for (std::int64_t m : {1, 5, 40}) {
    DamConfig cfg;
    cfg.steps = m;
    const AttributionMap map = compute_dam(square, hazy, base, r, cfg);
    for (std::int64_t y = 0; y < 7; ++y)
      for (std::int64_t x = 0; x < 7; ++x) {
        const auto i = static_cast<std::size_t>(y * 7 + x);
        const double d = double(hazy.data[i]) - base.data[i], b = base.data[i];
        const double want = inside(r, y, x) ? 2 * d * b + d * d * double(m + 1) / double(m) : 0.0;
        ASSERT_NEAR(map.scores[i], want, 2e-5) << "m=" << m;
      }
  }
}

TEST(Attribution, ZeroPathGivesZeroMap) {
  const ImageTensor img = random_image(8, 8, 3, 5);
  const AttributionMap map = compute_dam(square, img, img, {0, 0, 4}, DamConfig{10});
  for (float v : map.scores) ASSERT_EQ(v, 0.0f);
  EXPECT_DOUBLE_EQ(map.detector_input, map.detector_baseline);
}

TEST(Attribution, LocalModelsGiveLocalMaps) {
  Rng rng(6);
  nn::Conv2d blur(3, 3, 3, 1, 1, rng);
  const ImageFunction fn = [&](const Tensor& x) {
    return blur(x.reshape({1, x.size(0), x.size(1), x.size(2)})).reshape(x.shape());
  };
  const AttributionRegion r{6, 5, 3};
  const AttributionMap map = compute_dam(fn, random_image(16, 16, 3, 7), random_image(16, 16, 3, 8), r, DamConfig{8});
  double near = 0.0;
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t x = 0; x < 16; ++x) {
      const float v = map.scores[static_cast<std::size_t>(y * 16 + x)];
      if (inside(r, y, x, 1)) near += std::fabs(v);
      else ASSERT_EQ(v, 0.0f) << y << "," << x;
    }
  EXPECT_GT(near, 0.0);
}

TEST(Attribution, LinearInDetectorWeight) {
  const ImageTensor hazy = random_image(8, 8, 3, 9), base = random_image(8, 8, 3, 10);
  DamConfig one{6};
  DamConfig three{6};
  three.detector_weight = 3.0;
  const AttributionMap a = compute_dam(square, hazy, base, {2, 2, 3}, one);
  const AttributionMap b = compute_dam(square, hazy, base, {2, 2, 3}, three);
  for (std::size_t i = 0; i < a.scores.size(); ++i) ASSERT_NEAR(b.scores[i], 3.0f * a.scores[i], 1e-5);
  EXPECT_NEAR(b.detector_input, 3.0 * a.detector_input, 1e-4);
}

TEST(Attribution, ModelCompletenessImprovesWithSteps) {
  DehazeModel model(toy_config());
  const ImageTensor clear = synthetic_scene(128, 128, 3, 11);
  const ImageTensor hazy = synthesize_haze(clear, sample_haze_params(HazeDistribution{}, 3, 12));
  const AttributionRegion r{40, 50, 32};
  auto gap = [](const AttributionMap& map) {
    const double diff = map.detector_input - map.detector_baseline;
    return std::fabs(map.total() - diff) / std::fabs(diff);
  };
  const AttributionMap m50 = compute_dam(model, hazy, clear, r, DamConfig{50});
  const AttributionMap m100 = compute_dam(model, hazy, clear, r, DamConfig{100});
  EXPECT_EQ(m100.model_checksum, model.checksum());
  EXPECT_LT(gap(m100), gap(m50));
  EXPECT_LE(gap(m100), 0.01);
  double peak = 0.0, change = 0.0;
  for (std::size_t i = 0; i < m100.scores.size(); ++i) {
    peak = std::max(peak, std::fabs(double(m100.scores[i])));
    change = std::max(change, std::fabs(double(m100.scores[i]) - m50.scores[i]));
  }
  EXPECT_LE(change, 0.05 * peak);

  DehazeModel half = model.clone();
  half.set_precision(DType::f16);
  EXPECT_THROW(compute_dam(half, hazy, clear, r, DamConfig{2}), AttributionError);
}

TEST(Attribution, RejectsBadInputs) {
  const ImageTensor img = random_image(8, 8, 3, 13);
  EXPECT_THROW(compute_dam(identity, img, random_image(8, 9, 3, 1), {0, 0, 2}, DamConfig{}), std::invalid_argument);
  EXPECT_THROW(compute_dam(identity, img, img, {0, 0, 2}, DamConfig{0}), std::invalid_argument);
  const ImageFunction detached = [](const Tensor& x) { return x.detach(); };
  EXPECT_THROW(compute_dam(detached, img, random_image(8, 8, 3, 2), {0, 0, 2}, DamConfig{2}), AttributionError);
  EXPECT_THROW(step_weighting_from_string("simpson"), std::invalid_argument);
  EXPECT_EQ(channel_mode_from_string(to_string(ChannelMode::per_channel)), ChannelMode::per_channel);
}

TEST(Attribution, SidecarRoundTrip) {
  const auto dir = tessera::testing::temp_dir("attribution_io");
  DamConfig cfg{5};
  cfg.weighting = StepWeighting::as_printed;
  const AttributionMap map = compute_dam(square, random_image(6, 10, 3, 14), random_image(6, 10, 3, 15), {1, 1, 4}, cfg);
  save_attribution(map, dir / "map.f32");
  ASSERT_TRUE(fs::exists(dir / "map.f32.json"));
  const AttributionMap back = load_attribution(dir / "map.f32");
  EXPECT_EQ(back.scores, map.scores);
  EXPECT_EQ(back.height, 6);
  EXPECT_EQ(back.width, 10);
  EXPECT_EQ(back.steps, 5);
  EXPECT_EQ(back.weighting, StepWeighting::as_printed);
  EXPECT_EQ(back.region.x, 1);
  EXPECT_DOUBLE_EQ(back.detector_input, map.detector_input);

  std::fstream f(dir / "map.f32", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(load_attribution(dir / "map.f32"), std::runtime_error);
}

namespace {

AttributionMap golden_map() {
  AttributionMap m;
  m.height = 6;
  m.width = 8;
  m.scores.resize(48);
  for (std::int64_t i = 0; i < 48; ++i) m.scores[static_cast<std::size_t>(i)] = static_cast<float>((i % 9) - 4) / 4.0f;
  m.region = {5, 3, 2};
  return m;
}

ImageTensor golden_underlay() {
  ImageTensor u(6, 8, 3);
  for (std::int64_t y = 0; y < 6; ++y)
    for (std::int64_t x = 0; x < 8; ++x)
      for (std::int64_t c = 0; c < 3; ++c) u.at(y, x, c) = static_cast<float>(x + y + c) / 16.0f;
  return u;
}

}  // namespace

TEST(Heatmap, PixelsMatchColormapControlPoints) {
  const AttributionMap m = golden_map();
  const ImageTensor u = golden_underlay();
  const auto rgb = render_heatmap(m, u);
  ASSERT_EQ(rgb.size(), 6u * 8u * 3u);
  // Normalized scores of -1, -0.5, 0, 0.5, 1 land on the five control colors.
  const double ctrl[5][3] = {{0.2298, 0.2987, 0.7537},
                             {0.5543, 0.6901, 0.9955},
                             {0.8654, 0.8654, 0.8654},
                             {0.9567, 0.5980, 0.4773},
                             {0.7057, 0.0156, 0.1502}};
  for (std::int64_t y = 0; y < 6; ++y)
    for (std::int64_t x = 0; x < 8; ++x) {
      const auto p = static_cast<std::size_t>(y * 8 + x);
      const bool edge = inside(m.region, y, x);
      const double v = m.scores[p];
      const double a = 0.5 + 0.5 * std::fabs(v);
      const double gray = 0.299 * u.at(y, x, 0) + 0.587 * u.at(y, x, 1) + 0.114 * u.at(y, x, 2);
      const auto idx = static_cast<std::size_t>(std::lround((v + 1.0) * 2.0));
      const bool on_control = std::fabs((v + 1.0) * 2.0 - std::round((v + 1.0) * 2.0)) < 1e-9;
      for (int k = 0; k < 3; ++k) {
        const int got = rgb[p * 3 + static_cast<std::size_t>(k)];
        if (edge) {
          ASSERT_EQ(got, k == 1 ? 255 : 0);
        } else if (on_control) {
          const double want = std::clamp(a * ctrl[idx][k] + (1 - a) * gray, 0.0, 1.0) * 255.0;
          ASSERT_NEAR(got, want, 0.5 + 1e-9) << y << "," << x;
        }
      }
    }
  EXPECT_THROW(render_heatmap(m, ImageTensor(5, 8, 3)), std::invalid_argument);
}

TEST(Heatmap, MatchesGoldenFile) {
  const fs::path golden = fs::path(TESSERA_TEST_DATA_DIR) / "heatmap_golden.png";
  const auto rgb = render_heatmap(golden_map(), golden_underlay());
  if (std::getenv("TESSERA_WRITE_GOLDEN")) save_rgb8_png(rgb, 6, 8, golden);
  ASSERT_TRUE(fs::exists(golden));
  const ImageTensor g = load_image(golden);
  ASSERT_EQ(g.height, 6);
  ASSERT_EQ(g.channels, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) ASSERT_EQ(std::lround(g.data[i] * 255.0f), rgb[i]) << i;

  const auto dir = tessera::testing::temp_dir("heatmap_save");
  save_heatmap(golden_map(), golden_underlay(), dir / "h.png");
  EXPECT_EQ(load_image(dir / "h.png").data, g.data);
}
