#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/tensor.hpp"

namespace tessera {

/// Dense H x W x C image, interleaved channels, values in [0, 1].
struct ImageTensor {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(std::int64_t h, std::int64_t w, std::int64_t c, float fill = 0.0f);

  std::int64_t size() const { return height * width * channels; }
  float& at(std::int64_t y, std::int64_t x, std::int64_t c) { return data[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  float at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool same_dims(const ImageTensor& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  /// [H, W, C] tensor in the current default domain.
  Tensor to_tensor() const;
  /// Accepts [H, W, C] or [1, H, W, C].
  static ImageTensor from_tensor(const Tensor& t);
};

class ImageIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PNG or TIFF, 8- or 16-bit, grayscale or RGB(A, alpha dropped).
ImageTensor load_image(const std::filesystem::path& path);
/// Format by extension (.png, .tif, .tiff); values clamped to [0, 1] and
/// quantized with round-half-to-even.
void save_image(const ImageTensor& image, const std::filesystem::path& path, int bit_depth = 8);

/// 8-bit RGB buffer writer for rendered overlays.
void save_rgb8_png(const std::vector<std::uint8_t>& rgb, std::int64_t height, std::int64_t width,
                   const std::filesystem::path& path);

/// Row-major rotation by k quarter turns counter-clockwise.
ImageTensor rot90(const ImageTensor& image, int k);
ImageTensor crop(const ImageTensor& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w);

}  // namespace tessera
