#pragma once

#include <cstdint>
#include <stdexcept>

#include "tessera/image.hpp"
#include "tessera/tensor.hpp"

namespace tessera {

class TilingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TileLayout {
  std::int64_t original_height = 0;
  std::int64_t original_width = 0;
  std::int64_t patch_size = 0;
  std::int64_t pad_top = 0;
  std::int64_t pad_bottom = 0;
  std::int64_t pad_left = 0;
  std::int64_t pad_right = 0;
  std::int64_t grid_rows = 0;
  std::int64_t grid_cols = 0;

  std::int64_t num_patches() const { return grid_rows * grid_cols; }
  std::int64_t padded_height() const { return grid_rows * patch_size; }
  std::int64_t padded_width() const { return grid_cols * patch_size; }
  bool operator==(const TileLayout&) const = default;
};

/// Grid for an H x W image. Padding is split evenly, extra pixel at the
/// bottom/right.
TileLayout plan_tiles(std::int64_t height, std::int64_t width, std::int64_t patch_size);

/// Patches [N, p, p, C] in row-major grid order, in the current default domain.
struct PatchBatch {
  Tensor patches;
  TileLayout layout;
};

PatchBatch partition(const ImageTensor& image, std::int64_t patch_size);
/// Differentiable form on an [H, W, C] tensor.
Tensor partition(const Tensor& image, const TileLayout& layout);

ImageTensor reassemble(const Tensor& patches, const TileLayout& layout);
/// Differentiable form; returns [H, W, C].
Tensor reassemble_tensor(const Tensor& patches, const TileLayout& layout);

/// Index of the reflected sample for a position outside [0, n).
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

}  // namespace tessera
