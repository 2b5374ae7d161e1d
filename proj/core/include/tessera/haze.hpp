#pragma once

#include <cstdint>
#include <vector>

#include "tessera/image.hpp"

namespace tessera {

struct HazeParams {
  /// One entry per image channel.
  std::vector<float> airlight{0.9f, 0.9f, 0.9f};
  float coverage = 0.5f;
  float intensity = 0.5f;
  float t_min = 0.05f;
  std::uint64_t seed = 0;
};

/// Ranges haze parameters are drawn from when building a dataset.
struct HazeDistribution {
  float coverage_min = 0.3f;
  float coverage_max = 1.0f;
  float intensity_min = 0.4f;
  float intensity_max = 1.0f;
  float airlight_min = 0.8f;
  float airlight_max = 1.0f;
  /// Per-channel deviation from the shared airlight level.
  float airlight_jitter = 0.02f;
  float t_min = 0.05f;
};

HazeParams sample_haze_params(const HazeDistribution& dist, std::int64_t channels, std::uint64_t seed);

/// Fractal value noise in [0, 1]: `octaves` lattice layers with halving
/// amplitude, the coarsest spanning the longer side with four cells.
std::vector<float> value_noise(std::int64_t height, std::int64_t width, std::uint64_t seed, int octaves = 5,
                               float persistence = 0.5f);

/// Single-channel transmission field in [t_min, 1]. The fraction of pixels
/// with t < 0.9 tracks `coverage`; the darkest value is
/// 0.9 - intensity * (0.9 - t_min).
ImageTensor generate_transmission(std::int64_t height, std::int64_t width, float coverage, float intensity,
                                  std::uint64_t seed, float t_min = 0.05f);

/// hazy = clear * t + A * (1 - t), clamped to [0, 1].
ImageTensor synthesize_haze(const ImageTensor& clear, const ImageTensor& transmission,
                            const std::vector<float>& airlight);
ImageTensor synthesize_haze(const ImageTensor& clear, const HazeParams& params);

/// Smooth synthetic scene used as clear imagery for toy datasets.
ImageTensor synthetic_scene(std::int64_t height, std::int64_t width, std::int64_t channels, std::uint64_t seed);

}  // namespace tessera
