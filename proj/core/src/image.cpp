#include "tessera/image.hpp"

namespace tessera {

ImageTensor::ImageTensor(std::int64_t h, std::int64_t w, std::int64_t c, float fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h * w * c), fill) {
  if (h < 1 || w < 1 || c < 1) {
    throw std::invalid_argument("image dims must be positive, got " + std::to_string(h) + "x" + std::to_string(w) +
                                "x" + std::to_string(c));
  }
}

Tensor ImageTensor::to_tensor() const { return Tensor::from_data({height, width, channels}, data); }

ImageTensor ImageTensor::from_tensor(const Tensor& t) {
  if (!(t.rank() == 3 || (t.rank() == 4 && t.size(0) == 1))) {
    throw std::invalid_argument("expected an [H, W, C] tensor, got " + to_string(t.shape()));
  }
  ImageTensor img;
  img.height = t.size(-3);
  img.width = t.size(-2);
  img.channels = t.size(-1);
  img.data.assign(t.values().begin(), t.values().end());
  return img;
}

ImageTensor rot90(const ImageTensor& image, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return image;
  const std::int64_t h = image.height, w = image.width, c = image.channels;
  const bool swap = k % 2 == 1;
  ImageTensor out(swap ? w : h, swap ? h : w, c);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::int64_t oy, ox;
      switch (k) {
        case 1: oy = w - 1 - x; ox = y; break;
        case 2: oy = h - 1 - y; ox = w - 1 - x; break;
        default: oy = x; ox = h - 1 - y; break;
      }
      for (std::int64_t ch = 0; ch < c; ++ch) out.at(oy, ox, ch) = image.at(y, x, ch);
    }
  }
  return out;
}

ImageTensor crop(const ImageTensor& image, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
  if (y < 0 || x < 0 || y + h > image.height || x + w > image.width) {
    throw std::out_of_range("crop window outside image");
  }
  ImageTensor out(h, w, image.channels);
  for (std::int64_t r = 0; r < h; ++r) {
    const float* src = &image.data[static_cast<std::size_t>(((y + r) * image.width + x) * image.channels)];
    std::copy(src, src + w * image.channels, &out.data[static_cast<std::size_t>(r * w * image.channels)]);
  }
  return out;
}

}  // namespace tessera
