#include "tessera/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tessera/random.hpp"

namespace tessera {

using json = nlohmann::ordered_json;

namespace {

void check_pair(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument(std::string(what) + ": image dims differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                std::to_string(b.channels) + ")");
  }
  if (a.size() == 0) throw std::invalid_argument(std::string(what) + ": empty image");
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> g(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable 'valid' filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& g) {
  const std::int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(y * w + x + k)];
      rows[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  return out;
}

double json_number(double v) { return std::isfinite(v) ? v : kPsnrCap; }

}  // namespace

double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("psnr: buffer sizes differ");
  if (a.empty()) throw std::invalid_argument("psnr: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
  check_pair(a, b, "psnr");
  return psnr(std::vector<double>(a.data.begin(), a.data.end()), std::vector<double>(b.data.begin(), b.data.end()));
}

double ssim(const std::vector<double>& a, const std::vector<double>& b, std::int64_t h, std::int64_t w,
            std::int64_t ch) {
  if (h < 0 || w < 0 || ch < 1 || a.size() != static_cast<std::size_t>(h * w * ch) || b.size() != a.size()) {
    throw std::invalid_argument("ssim: buffer sizes do not match the dims");
  }
  if (h < kWindow || w < kWindow) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_taps();
  const auto n = static_cast<std::size_t>(h * w);
  double total = 0.0;
  for (std::int64_t c = 0; c < ch; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a[i * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
      y[i] = b[i * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(ch);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  check_pair(a, b, "ssim");
  return ssim(std::vector<double>(a.data.begin(), a.data.end()), std::vector<double>(b.data.begin(), b.data.end()),
              a.height, a.width, a.channels);
}

double EvalReport::mean_psnr() const {
  if (images.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : images) s += std::min(r.psnr, kPsnrCap);
  return s / static_cast<double>(images.size());
}

double EvalReport::mean_ssim() const {
  if (images.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : images) s += r.ssim;
  return s / static_cast<double>(images.size());
}

double EvalReport::total_seconds() const {
  double s = 0.0;
  for (const auto& r : images) s += r.seconds;
  return s;
}

namespace {

json stages_json(const std::vector<StageReport>& stages) {
  json arr = json::array();
  for (const auto& s : stages) {
    arr.push_back({{"stage", s.stage}, {"device_peak", s.device_peak}, {"host_peak", s.host_peak}, {"seconds", s.seconds}});
  }
  return arr;
}

}  // namespace

std::string EvalReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto& r : images) {
    json j{{"image", r.name}, {"psnr", json_number(r.psnr)}, {"psnr_infinite", !std::isfinite(r.psnr)},
           {"ssim", r.ssim}, {"seconds", r.seconds}};
    if (!r.stages.empty()) j["stages"] = stages_json(r.stages);
    os << j.dump() << '\n';
  }
  json agg{{"aggregate", true}, {"count", images.size()}, {"mean_psnr", mean_psnr()}, {"mean_ssim", mean_ssim()},
           {"total_seconds", total_seconds()}};
  os << agg.dump() << '\n';
  return os.str();
}

std::vector<ProfilePoint> profile_run(const DehazeModel& model, const std::vector<std::int64_t>& sizes,
                                      const ProfileOptions& opts) {
  std::vector<ProfilePoint> points;
  const std::int64_t channels = model.config().encoder.in_channels;
  for (std::int64_t size : sizes) {
    ProfilePoint pt;
    pt.height = pt.width = size;
    pt.precision = std::string(to_string(model.config().precision));
    ImageTensor image(size, size, channels);
    Rng rng(Rng::derive(opts.seed, {static_cast<std::uint64_t>(size)}));
    for (auto& v : image.data) v = static_cast<float>(rng.uniform());

    RuntimeOptions runtime = opts.runtime;
    auto user = runtime.on_stage;
    runtime.on_stage = [&](const StageReport& r) {
      pt.stages.push_back(r);
      pt.device_peak = std::max(pt.device_peak, r.device_peak);
      pt.host_peak = std::max(pt.host_peak, r.host_peak);
      if (user) user(r);
    };
    const TileLayout layout = plan_tiles(size, size, model.config().encoder.patch_size);
    const std::int64_t ts = model.config().encoder.token_spatial();
    pt.tokens = layout.num_patches() * ts * ts;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      model.dehaze(image, runtime);
    } catch (const StageOutOfMemory& oom) {
      pt.out_of_memory = true;
      pt.failed_stage = oom.stage();
    }
    pt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    points.push_back(std::move(pt));
  }
  return points;
}

std::string profile_to_jsonl(const std::vector<ProfilePoint>& points) {
  std::ostringstream os;
  for (const auto& p : points) {
    json j{{"height", p.height}, {"width", p.width}, {"precision", p.precision}, {"tokens", p.tokens},
           {"out_of_memory", p.out_of_memory}, {"device_peak", p.device_peak}, {"host_peak", p.host_peak},
           {"seconds", p.seconds}, {"stages", stages_json(p.stages)}};
    if (p.out_of_memory) j["failed_stage"] = p.failed_stage;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string profile_to_csv(const std::vector<ProfilePoint>& points) {
  std::ostringstream os;
  os << "size,precision,stage,device_peak,host_peak,seconds\n";
  for (const auto& p : points) {
    const std::string size = std::to_string(p.height) + "x" + std::to_string(p.width);
    for (const auto& s : p.stages) {
      os << size << ',' << p.precision << ',' << s.stage << ',' << s.device_peak << ',' << s.host_peak << ',' << s.seconds
         << '\n';
    }
    os << size << ',' << p.precision << ',' << (p.out_of_memory ? "total_oom" : "total") << ',' << p.device_peak << ','
       << p.host_peak << ',' << p.seconds << '\n';
  }
  return os.str();
}

}  // namespace tessera
