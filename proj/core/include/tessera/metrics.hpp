#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tessera/image.hpp"
#include "tessera/model.hpp"

namespace tessera {

/// PSNR cap used when aggregating identical pairs.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on [0, 1] intensities; +inf for identical images.
double psnr(const ImageTensor& a, const ImageTensor& b);
/// Mean SSIM over the fully covered ("valid") 11x11 Gaussian windows
/// (sigma 1.5, K1 0.01, K2 0.03, L 1), averaged over channels.
double ssim(const ImageTensor& a, const ImageTensor& b);

/// Double-precision forms on interleaved H x W x C buffers.
double psnr(const std::vector<double>& a, const std::vector<double>& b);
double ssim(const std::vector<double>& a, const std::vector<double>& b, std::int64_t height, std::int64_t width,
            std::int64_t channels);

struct ImageRecord {
  std::string name;
  double psnr = 0.0;  // may be +inf
  double ssim = 0.0;
  double seconds = 0.0;
  std::vector<StageReport> stages;
};

struct EvalReport {
  std::vector<ImageRecord> images;

  double mean_psnr() const;  // infinite entries count as kPsnrCap
  double mean_ssim() const;
  double total_seconds() const;
  /// One JSON object per image, then an aggregate record.
  std::string to_jsonl() const;
};

struct ProfilePoint {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::string precision;
  bool out_of_memory = false;
  std::string failed_stage;  // set on OOM
  std::int64_t tokens = 0;
  std::size_t device_peak = 0;
  std::size_t host_peak = 0;
  double seconds = 0.0;
  std::vector<StageReport> stages;
};

struct ProfileOptions {
  std::uint64_t seed = 0;
  RuntimeOptions runtime;
};

/// Runs inference on seeded random square images of each size and records
/// per-stage device and host high-water marks. Out-of-memory failures are
/// recorded, not thrown.
std::vector<ProfilePoint> profile_run(const DehazeModel& model, const std::vector<std::int64_t>& sizes,
                                      const ProfileOptions& opts = {});

std::string profile_to_jsonl(const std::vector<ProfilePoint>& points);
/// size,precision,stage,device_peak,host_peak,seconds plus a `total` row per point.
std::string profile_to_csv(const std::vector<ProfilePoint>& points);

}  // namespace tessera
