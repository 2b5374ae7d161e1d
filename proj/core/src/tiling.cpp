#include "tessera/tiling.hpp"

#include "tessera/ops.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace tessera {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

TileLayout plan_tiles(std::int64_t height, std::int64_t width, std::int64_t patch_size) {
  if (height < 1 || width < 1) throw TilingError("image dimensions must be >= 1");
  if (patch_size < 16) throw TilingError("patch_size must be >= 16, got " + std::to_string(patch_size));
  if (patch_size > 4 * height && patch_size > 4 * width) {
    throw TilingError("patch_size " + std::to_string(patch_size) + " exceeds 4x the image extent " +
                      std::to_string(height) + "x" + std::to_string(width) + " (degenerate tiling)");
  }
  TileLayout l;
  l.original_height = height;
  l.original_width = width;
  l.patch_size = patch_size;
  l.grid_rows = (height + patch_size - 1) / patch_size;
  l.grid_cols = (width + patch_size - 1) / patch_size;
  const std::int64_t ph = l.padded_height() - height;
  const std::int64_t pw = l.padded_width() - width;
  l.pad_top = ph / 2;
  l.pad_bottom = ph - l.pad_top;
  l.pad_left = pw / 2;
  l.pad_right = pw - l.pad_left;
  return l;
}

namespace {

void check_layout(const TileLayout& l) {
  if (l.padded_height() != l.original_height + l.pad_top + l.pad_bottom ||
      l.padded_width() != l.original_width + l.pad_left + l.pad_right || l.pad_top < 0 || l.pad_left < 0 ||
      l.pad_bottom < 0 || l.pad_right < 0 || l.pad_top >= l.patch_size || l.pad_bottom >= l.patch_size ||
      l.pad_left >= l.patch_size || l.pad_right >= l.patch_size) {
    throw TilingError("inconsistent tile layout");
  }
}

// Source pixel (row-major y * W + x) for each element of the padded grid,
// enumerated in patch order.
std::vector<std::int64_t> patch_sources(const TileLayout& l) {
  const std::int64_t p = l.patch_size;
  std::vector<std::int64_t> ry(static_cast<std::size_t>(l.padded_height()));
  std::vector<std::int64_t> rx(static_cast<std::size_t>(l.padded_width()));
  for (std::size_t i = 0; i < ry.size(); ++i) ry[i] = reflect_index(static_cast<std::int64_t>(i) - l.pad_top, l.original_height);
  for (std::size_t i = 0; i < rx.size(); ++i) rx[i] = reflect_index(static_cast<std::int64_t>(i) - l.pad_left, l.original_width);
  std::vector<std::int64_t> src(static_cast<std::size_t>(l.num_patches() * p * p));
  std::size_t k = 0;
  for (std::int64_t gr = 0; gr < l.grid_rows; ++gr) {
    for (std::int64_t gc = 0; gc < l.grid_cols; ++gc) {
      for (std::int64_t i = 0; i < p; ++i) {
        const std::int64_t row = ry[static_cast<std::size_t>(gr * p + i)] * l.original_width;
        for (std::int64_t j = 0; j < p; ++j) src[k++] = row + rx[static_cast<std::size_t>(gc * p + j)];
      }
    }
  }
  return src;
}

// Position in the patch batch (row-major over [N, p, p]) of each original pixel.
std::vector<std::int64_t> pixel_sources(const TileLayout& l) {
  const std::int64_t p = l.patch_size;
  std::vector<std::int64_t> src(static_cast<std::size_t>(l.original_height * l.original_width));
  std::size_t k = 0;
  for (std::int64_t y = 0; y < l.original_height; ++y) {
    const std::int64_t py = y + l.pad_top;
    for (std::int64_t x = 0; x < l.original_width; ++x) {
      const std::int64_t px = x + l.pad_left;
      const std::int64_t n = (py / p) * l.grid_cols + px / p;
      src[k++] = (n * p + py % p) * p + px % p;
    }
  }
  return src;
}

}  // namespace

Tensor partition(const Tensor& image, const TileLayout& layout) {
  if (image.rank() != 3 || image.size(0) != layout.original_height || image.size(1) != layout.original_width) {
    throw TilingError("image " + to_string(image.shape()) + " does not match layout");
  }
  check_layout(layout);
  const std::int64_t c = image.size(2);
  const auto src = patch_sources(layout);
  const Tensor rows = image.reshape({layout.original_height * layout.original_width, c});
  const std::int64_t p = layout.patch_size;
  return ops::gather_rows(rows, src).reshape({layout.num_patches(), p, p, c});
}

PatchBatch partition(const ImageTensor& image, std::int64_t patch_size) {
  for (float v : image.data) {
    if (!std::isfinite(v)) throw TilingError("image contains non-finite pixel values");
  }
  PatchBatch batch;
  batch.layout = plan_tiles(image.height, image.width, patch_size);
  batch.patches = partition(image.to_tensor(), batch.layout);
  return batch;
}

Tensor reassemble_tensor(const Tensor& patches, const TileLayout& layout) {
  check_layout(layout);
  const std::int64_t p = layout.patch_size;
  if (patches.rank() != 4 || patches.size(0) != layout.num_patches() || patches.size(1) != p || patches.size(2) != p) {
    throw TilingError("patches " + to_string(patches.shape()) + " do not match layout of " +
                      std::to_string(layout.num_patches()) + " patches of " + std::to_string(p) + "px");
  }
  const std::int64_t c = patches.size(3);
  const auto src = pixel_sources(layout);
  const Tensor rows = patches.reshape({layout.num_patches() * p * p, c});
  return ops::gather_rows(rows, src).reshape({layout.original_height, layout.original_width, c});
}

ImageTensor reassemble(const Tensor& patches, const TileLayout& layout) {
  NoGradGuard no_grad;
  return ImageTensor::from_tensor(reassemble_tensor(patches, layout));
}

}  // namespace tessera
