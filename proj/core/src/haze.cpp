#include "tessera/haze.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tessera/random.hpp"

namespace tessera {

HazeParams sample_haze_params(const HazeDistribution& dist, std::int64_t channels, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, {0x68617a65}));
  HazeParams p;
  p.seed = seed;
  p.t_min = dist.t_min;
  p.coverage = static_cast<float>(rng.uniform(dist.coverage_min, dist.coverage_max));
  p.intensity = static_cast<float>(rng.uniform(dist.intensity_min, dist.intensity_max));
  const double level = rng.uniform(dist.airlight_min, dist.airlight_max);
  p.airlight.resize(static_cast<std::size_t>(channels));
  for (auto& a : p.airlight) {
    a = static_cast<float>(std::clamp(level + rng.uniform(-dist.airlight_jitter, dist.airlight_jitter), 0.0, 1.0));
  }
  return p;
}

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

}  // namespace

std::vector<float> value_noise(std::int64_t height, std::int64_t width, std::uint64_t seed, int octaves,
                               float persistence) {
  if (height < 1 || width < 1) throw std::invalid_argument("value_noise: empty field");
  const auto n = static_cast<std::size_t>(height * width);
  std::vector<double> acc(n, 0.0);
  const double extent = static_cast<double>(std::max(height, width));
  double amplitude = 1.0, total = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const std::int64_t cells = std::int64_t{4} << o;
    const std::int64_t side = cells + 2;
    Rng rng(Rng::derive(seed, {static_cast<std::uint64_t>(o)}));
    std::vector<double> lattice(static_cast<std::size_t>(side * side));
    for (auto& v : lattice) v = rng.uniform();
    const double scale = static_cast<double>(cells) / extent;
    for (std::int64_t y = 0; y < height; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) * scale;
      const auto y0 = static_cast<std::int64_t>(fy);
      const double ty = fade(fy - static_cast<double>(y0));
      for (std::int64_t x = 0; x < width; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) * scale;
        const auto x0 = static_cast<std::int64_t>(fx);
        const double tx = fade(fx - static_cast<double>(x0));
        auto at = [&](std::int64_t r, std::int64_t c) { return lattice[static_cast<std::size_t>(r * side + c)]; };
        const double top = at(y0, x0) + (at(y0, x0 + 1) - at(y0, x0)) * tx;
        const double bottom = at(y0 + 1, x0) + (at(y0 + 1, x0 + 1) - at(y0 + 1, x0)) * tx;
        acc[static_cast<std::size_t>(y * width + x)] += amplitude * (top + (bottom - top) * ty);
      }
    }
    total += amplitude;
    amplitude *= persistence;
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] / total);
  return out;
}

ImageTensor generate_transmission(std::int64_t height, std::int64_t width, float coverage, float intensity,
                                  std::uint64_t seed, float t_min) {
  if (!(coverage >= 0.0f && coverage <= 1.0f) || !(intensity >= 0.0f && intensity <= 1.0f)) {
    throw std::invalid_argument("generate_transmission: coverage and intensity must lie in [0, 1]");
  }
  if (!(t_min >= 0.0f && t_min < 0.9f)) throw std::invalid_argument("generate_transmission: t_min must lie in [0, 0.9)");
  ImageTensor t(height, width, 1, 1.0f);
  const auto n = static_cast<std::int64_t>(t.data.size());
  const auto clear_count = static_cast<std::int64_t>(std::llround((1.0 - coverage) * static_cast<double>(n)));
  if (clear_count >= n) return t;

  const std::vector<float> noise = value_noise(height, width, seed);
  std::vector<float> sorted = noise;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  const double range = std::max(hi - lo, 1e-12);
  const double threshold = clear_count > 0 ? sorted[static_cast<std::size_t>(clear_count - 1)] : lo - 1e-6 * range;
  const double span = std::max(hi - threshold, 1e-12);
  const double rim = 0.1 * range;
  const double t_low = 0.9 - static_cast<double>(intensity) * (0.9 - t_min);

  for (std::int64_t i = 0; i < n; ++i) {
    const double v = noise[static_cast<std::size_t>(i)];
    double value;
    if (v > threshold) {
      const double r = std::sqrt(std::min(1.0, (v - threshold) / span));
      value = 0.9 - (0.9 - t_low) * r;
    } else {
      const double s = std::clamp((v - (threshold - rim)) / rim, 0.0, 1.0);
      value = 1.0 - 0.1 * s * s * (3.0 - 2.0 * s);
    }
    t.data[static_cast<std::size_t>(i)] = static_cast<float>(value);
  }
  return t;
}

ImageTensor synthesize_haze(const ImageTensor& clear, const ImageTensor& transmission,
                            const std::vector<float>& airlight) {
  if (transmission.channels != 1 || transmission.height != clear.height || transmission.width != clear.width) {
    throw std::invalid_argument("synthesize_haze: transmission field must be " + std::to_string(clear.height) + "x" +
                                std::to_string(clear.width) + "x1");
  }
  if (static_cast<std::int64_t>(airlight.size()) != clear.channels) {
    throw std::invalid_argument("synthesize_haze: airlight needs one value per channel");
  }
  for (float a : airlight) {
    if (!std::isfinite(a)) throw std::invalid_argument("synthesize_haze: airlight must be finite");
  }
  ImageTensor hazy(clear.height, clear.width, clear.channels);
  const std::int64_t c = clear.channels;
  const std::int64_t pixels = clear.height * clear.width;
  for (std::int64_t p = 0; p < pixels; ++p) {
    const float t = transmission.data[static_cast<std::size_t>(p)];
    for (std::int64_t k = 0; k < c; ++k) {
      const auto i = static_cast<std::size_t>(p * c + k);
      hazy.data[i] = std::clamp(clear.data[i] * t + airlight[static_cast<std::size_t>(k)] * (1.0f - t), 0.0f, 1.0f);
    }
  }
  return hazy;
}

ImageTensor synthesize_haze(const ImageTensor& clear, const HazeParams& params) {
  const ImageTensor t =
      generate_transmission(clear.height, clear.width, params.coverage, params.intensity, params.seed, params.t_min);
  return synthesize_haze(clear, t, params.airlight);
}

ImageTensor synthetic_scene(std::int64_t height, std::int64_t width, std::int64_t channels, std::uint64_t seed) {
  ImageTensor img(height, width, channels);
  const std::vector<float> shade = value_noise(height, width, Rng::derive(seed, {0}), 5, 0.6f);
  for (std::int64_t k = 0; k < channels; ++k) {
    const std::vector<float> tint = value_noise(height, width, Rng::derive(seed, {static_cast<std::uint64_t>(k + 1)}), 3);
    for (std::int64_t p = 0; p < height * width; ++p) {
      const auto i = static_cast<std::size_t>(p);
      const float v = 0.15f + 1.1f * (shade[i] - 0.5f) + 0.6f * (tint[i] - 0.5f) + 0.3f;
      img.data[static_cast<std::size_t>(p * channels + k)] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return img;
}

}  // namespace tessera
