#include <algorithm>
#include <array>
#include <cmath>

#include "tessera/attribution.hpp"

namespace tessera {

namespace {

constexpr std::array<std::array<double, 3>, 5> kCoolwarm{{
    {0.2298, 0.2987, 0.7537},
    {0.5543, 0.6901, 0.9955},
    {0.8654, 0.8654, 0.8654},
    {0.9567, 0.5980, 0.4773},
    {0.7057, 0.0156, 0.1502},
}};

std::array<double, 3> coolwarm(double t) {
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = kCoolwarm[i][k] + (kCoolwarm[i + 1][k] - kCoolwarm[i][k]) * f;
  return c;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::uint8_t> render_heatmap(const AttributionMap& map, const ImageTensor& underlay) {
  if (underlay.height != map.height || underlay.width != map.width) {
    throw std::invalid_argument("heatmap underlay dims differ from the attribution map");
  }
  const std::int64_t h = map.height, w = map.width;
  std::vector<double> pixel(static_cast<std::size_t>(h * w), 0.0);
  for (std::size_t p = 0; p < pixel.size(); ++p) {
    for (std::int64_t c = 0; c < map.channels; ++c) {
      pixel[p] += map.scores[p * static_cast<std::size_t>(map.channels) + static_cast<std::size_t>(c)];
    }
  }
  double peak = 0.0;
  for (double v : pixel) peak = std::max(peak, std::abs(v));

  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto p = static_cast<std::size_t>(y * w + x);
      double gray;
      if (underlay.channels >= 3) {
        gray = 0.299 * underlay.at(y, x, 0) + 0.587 * underlay.at(y, x, 1) + 0.114 * underlay.at(y, x, 2);
      } else {
        gray = underlay.at(y, x, 0);
      }
      const double v = peak > 0.0 ? pixel[p] / peak : 0.0;
      const auto color = coolwarm(0.5 + 0.5 * v);
      const double alpha = 0.5 + 0.5 * std::abs(v);
      for (std::size_t k = 0; k < 3; ++k) rgb[p * 3 + k] = to_byte(alpha * color[k] + (1.0 - alpha) * gray);
    }
  }
  const auto& r = map.region;
  auto mark = [&](std::int64_t y, std::int64_t x) {
    if (y < 0 || x < 0 || y >= h || x >= w) return;
    const auto p = static_cast<std::size_t>(y * w + x) * 3;
    rgb[p] = 0;
    rgb[p + 1] = 255;
    rgb[p + 2] = 0;
  };
  for (std::int64_t i = 0; i < r.l; ++i) {
    mark(r.y, r.x + i);
    mark(r.y + r.l - 1, r.x + i);
    mark(r.y + i, r.x);
    mark(r.y + i, r.x + r.l - 1);
  }
  return rgb;
}

void save_heatmap(const AttributionMap& map, const ImageTensor& underlay, const std::filesystem::path& path) {
  save_rgb8_png(render_heatmap(map, underlay), map.height, map.width, path);
}

}  // namespace tessera
