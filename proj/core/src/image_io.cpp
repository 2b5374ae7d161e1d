#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "tessera/image.hpp"

namespace tessera {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

void check_format(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext != ".png" && ext != ".tif" && ext != ".tiff") {
    throw ImageIOError("unsupported image format '" + ext + "' for " + path.string() + " (png, tif, tiff)");
  }
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
  check_format(path);
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw ImageIOError("cannot read image " + path.string());
  double scale;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw ImageIOError("unsupported sample depth in " + path.string());
  }
  const int src_channels = raw.channels();
  const std::int64_t channels = src_channels >= 3 ? 3 : 1;
  ImageTensor img(raw.rows, raw.cols, channels);
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) {
      for (std::int64_t c = 0; c < channels; ++c) {
        // OpenCV stores BGR(A); flip to RGB.
        const int src_c = channels == 3 ? static_cast<int>(2 - c) : 0;
        double v;
        if (raw.depth() == CV_8U) v = raw.ptr<std::uint8_t>(y)[x * src_channels + src_c];
        else v = raw.ptr<std::uint16_t>(y)[x * src_channels + src_c];
        img.at(y, x, c) = static_cast<float>(v * scale);
      }
    }
  }
  return img;
}

void save_image(const ImageTensor& image, const std::filesystem::path& path, int bit_depth) {
  check_format(path);
  if (bit_depth != 8 && bit_depth != 16) throw ImageIOError("bit depth must be 8 or 16");
  if (image.channels != 1 && image.channels != 3) throw ImageIOError("only 1- or 3-channel images can be saved");
  const int type = bit_depth == 8 ? CV_MAKETYPE(CV_8U, static_cast<int>(image.channels))
                                  : CV_MAKETYPE(CV_16U, static_cast<int>(image.channels));
  const double max_value = bit_depth == 8 ? 255.0 : 65535.0;
  cv::Mat mat(static_cast<int>(image.height), static_cast<int>(image.width), type);
  for (std::int64_t y = 0; y < image.height; ++y) {
    for (std::int64_t x = 0; x < image.width; ++x) {
      for (std::int64_t c = 0; c < image.channels; ++c) {
        const std::int64_t dst_c = image.channels == 3 ? 2 - c : 0;
        const double v = std::nearbyint(std::clamp<double>(image.at(y, x, c), 0.0, 1.0) * max_value);
        const auto idx = static_cast<int>(x * image.channels + dst_c);
        if (bit_depth == 8) mat.ptr<std::uint8_t>(static_cast<int>(y))[idx] = static_cast<std::uint8_t>(v);
        else mat.ptr<std::uint16_t>(static_cast<int>(y))[idx] = static_cast<std::uint16_t>(v);
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw ImageIOError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw ImageIOError("cannot write " + path.string());
}

void save_rgb8_png(const std::vector<std::uint8_t>& rgb, std::int64_t height, std::int64_t width,
                   const std::filesystem::path& path) {
  if (static_cast<std::int64_t>(rgb.size()) != height * width * 3) throw ImageIOError("rgb buffer size mismatch");
  cv::Mat mat(static_cast<int>(height), static_cast<int>(width), CV_8UC3);
  for (std::int64_t y = 0; y < height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::int64_t x = 0; x < width; ++x) {
      const auto base = static_cast<std::size_t>((y * width + x) * 3);
      row[x * 3 + 0] = rgb[base + 2];
      row[x * 3 + 1] = rgb[base + 1];
      row[x * 3 + 2] = rgb[base + 0];
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Fixed compression settings keep the encoded bytes reproducible.
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6, cv::IMWRITE_PNG_STRATEGY, cv::IMWRITE_PNG_STRATEGY_DEFAULT};
  if (!cv::imwrite(path.string(), mat, params)) throw ImageIOError("cannot write " + path.string());
}

}  // namespace tessera
