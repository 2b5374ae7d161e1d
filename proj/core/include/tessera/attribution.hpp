#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/image.hpp"
#include "tessera/model.hpp"

namespace tessera {

class AttributionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Window [x, x + l) x [y, y + l); x is the column, y the row.
struct AttributionRegion {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t l = 1;
};

/// `riemann` weights each step by (I - I') / m. `as_printed` uses the
/// difference gamma(k/m) - gamma((k+1)/m) divided by m, i.e. -(I - I') / m^2.
enum class StepWeighting { riemann, as_printed };
/// `sum` reduces the map over channels; `per_channel` keeps them.
enum class ChannelMode { sum, per_channel };

std::string to_string(StepWeighting w);
StepWeighting step_weighting_from_string(const std::string& s);
std::string to_string(ChannelMode m);
ChannelMode channel_mode_from_string(const std::string& s);

struct DamConfig {
  std::int64_t steps = 100;
  StepWeighting weighting = StepWeighting::riemann;
  ChannelMode channel_mode = ChannelMode::sum;
  /// Scale applied to the detector.
  double detector_weight = 1.0;
};

struct AttributionMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 1;
  std::vector<float> scores;
  AttributionRegion region;
  std::int64_t steps = 0;
  StepWeighting weighting = StepWeighting::riemann;
  std::uint64_t model_checksum = 0;
  /// Weighted detector values on the model outputs for input and baseline.
  double detector_input = 0.0;
  double detector_baseline = 0.0;

  double total() const;
};

void check_region(const AttributionRegion& region, std::int64_t height, std::int64_t width);

/// Sum of intensities over the window and all channels, in double.
double detector_response(const ImageTensor& image, const AttributionRegion& region);
/// Differentiable detector on an [H, W, C] tensor.
Tensor detector_response(const Tensor& image, const AttributionRegion& region);

/// Differentiable image-to-image function, [H, W, C] -> [H, W, C].
using ImageFunction = std::function<Tensor(const Tensor&)>;

AttributionMap compute_dam(const ImageFunction& fn, const ImageTensor& hazy, const ImageTensor& baseline,
                           const AttributionRegion& region, const DamConfig& cfg);
/// fp32 models only.
AttributionMap compute_dam(const DehazeModel& model, const ImageTensor& hazy, const ImageTensor& baseline,
                           const AttributionRegion& region, const DamConfig& cfg);

/// Raw little-endian float32 scores at `path` plus a `<path>.json` sidecar
/// (dims, region, steps, weighting, model checksum, scores checksum).
void save_attribution(const AttributionMap& map, const std::filesystem::path& path);
AttributionMap load_attribution(const std::filesystem::path& path);

/// Diverging (coolwarm) overlay normalized by max |score|, blended over the
/// grayscale underlay, with the region outlined in green.
std::vector<std::uint8_t> render_heatmap(const AttributionMap& map, const ImageTensor& underlay);
void save_heatmap(const AttributionMap& map, const ImageTensor& underlay, const std::filesystem::path& path);

}  // namespace tessera
