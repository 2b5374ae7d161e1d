#include "tessera/attribution.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tessera/ops.hpp"

namespace tessera {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(StepWeighting w) { return w == StepWeighting::riemann ? "riemann" : "as_printed"; }

StepWeighting step_weighting_from_string(const std::string& s) {
  if (s == "riemann") return StepWeighting::riemann;
  if (s == "as_printed") return StepWeighting::as_printed;
  throw std::invalid_argument("unknown step weighting '" + s + "' (riemann, as_printed)");
}

std::string to_string(ChannelMode m) { return m == ChannelMode::sum ? "sum" : "per_channel"; }

ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "sum") return ChannelMode::sum;
  if (s == "per_channel") return ChannelMode::per_channel;
  throw std::invalid_argument("unknown channel mode '" + s + "' (sum, per_channel)");
}

double AttributionMap::total() const {
  double s = 0.0;
  for (float v : scores) s += v;
  return s;
}

void check_region(const AttributionRegion& r, std::int64_t height, std::int64_t width) {
  if (r.l < 1 || r.x < 0 || r.y < 0 || r.x + r.l > width || r.y + r.l > height) {
    throw std::invalid_argument("region x=" + std::to_string(r.x) + " y=" + std::to_string(r.y) + " l=" +
                                std::to_string(r.l) + " is not inside the " + std::to_string(height) + "x" +
                                std::to_string(width) + " image");
  }
}

double detector_response(const ImageTensor& image, const AttributionRegion& r) {
  check_region(r, image.height, image.width);
  double s = 0.0;
  for (std::int64_t y = r.y; y < r.y + r.l; ++y)
    for (std::int64_t x = r.x; x < r.x + r.l; ++x)
      for (std::int64_t c = 0; c < image.channels; ++c) s += image.at(y, x, c);
  return s;
}

Tensor detector_response(const Tensor& image, const AttributionRegion& r) {
  if (image.rank() != 3) throw std::invalid_argument("detector expects an [H, W, C] tensor");
  check_region(r, image.size(0), image.size(1));
  return ops::sum(ops::slice(ops::slice(image, 0, r.y, r.l), 1, r.x, r.l));
}

namespace {

struct StepContext {
  const ImageFunction& fn;
  const ImageTensor& baseline;
  const std::vector<float>& delta;
  const AttributionRegion& region;
  const DamConfig& cfg;
  std::vector<float> weight;  // per-element step factor
};

// Gradient of the weighted detector at gamma(k / m), times the step factor.
std::vector<double> step_term(const StepContext& ctx, std::int64_t k) {
  const double alpha = static_cast<double>(k) / static_cast<double>(ctx.cfg.steps);
  const ImageTensor& b = ctx.baseline;
  std::vector<float> point(ctx.delta.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    point[i] = static_cast<float>(b.data[i] + alpha * static_cast<double>(ctx.delta[i]));
  }
  Tensor x;
  {
    DomainGuard host(Domain::host);
    x = Tensor::from_data({b.height, b.width, b.channels}, std::move(point));
  }
  x.set_requires_grad();
  Tensor y = ctx.fn(x);
  if (!y.defined() || !y.requires_grad()) {
    throw AttributionError("model output does not depend differentiably on its input");
  }
  Tensor d = ops::mul_scalar(detector_response(y, ctx.region), static_cast<float>(ctx.cfg.detector_weight));
  d.backward();
  const Tensor g = x.grad();
  std::vector<double> term(ctx.delta.size(), 0.0);
  if (!g.defined()) return term;
  const float* gd = g.data();
  for (std::size_t i = 0; i < term.size(); ++i) term[i] = static_cast<double>(gd[i]) * ctx.weight[i];
  return term;
}

// Pairwise reduction over steps [lo, hi).
std::vector<double> pairwise(const StepContext& ctx, std::int64_t lo, std::int64_t hi) {
  if (hi - lo == 1) return step_term(ctx, lo);
  const std::int64_t mid = lo + (hi - lo) / 2;
  std::vector<double> a = pairwise(ctx, lo, mid);
  const std::vector<double> b = pairwise(ctx, mid, hi);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

double detector_on_output(const ImageFunction& fn, const ImageTensor& image, const AttributionRegion& r, double w) {
  NoGradGuard no_grad;
  Tensor x;
  {
    DomainGuard host(Domain::host);
    x = image.to_tensor();
  }
  return w * static_cast<double>(detector_response(fn(x), r).item());
}

}  // namespace

AttributionMap compute_dam(const ImageFunction& fn, const ImageTensor& hazy, const ImageTensor& baseline,
                           const AttributionRegion& region, const DamConfig& cfg) {
  if (!hazy.same_dims(baseline)) throw std::invalid_argument("compute_dam: input and baseline dims differ");
  if (cfg.steps < 1) throw std::invalid_argument("compute_dam: steps must be >= 1");
  check_region(region, hazy.height, hazy.width);

  std::vector<float> delta(hazy.data.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = hazy.data[i] - baseline.data[i];
  StepContext ctx{fn, baseline, delta, region, cfg, {}};
  ctx.weight.resize(delta.size());
  const double m = static_cast<double>(cfg.steps);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    // gamma(k/m) - gamma((k+1)/m) = -(I - I') / m for the linear path.
    ctx.weight[i] = cfg.weighting == StepWeighting::riemann ? static_cast<float>(delta[i] / m)
                                                           : static_cast<float>(-delta[i] / m / m);
  }

  const std::vector<double> acc = pairwise(ctx, 1, cfg.steps + 1);

  AttributionMap map;
  map.height = hazy.height;
  map.width = hazy.width;
  map.region = region;
  map.steps = cfg.steps;
  map.weighting = cfg.weighting;
  const std::int64_t c = hazy.channels;
  if (cfg.channel_mode == ChannelMode::per_channel) {
    map.channels = c;
    map.scores.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) map.scores[i] = static_cast<float>(acc[i]);
  } else {
    map.channels = 1;
    map.scores.resize(static_cast<std::size_t>(hazy.height * hazy.width));
    for (std::size_t p = 0; p < map.scores.size(); ++p) {
      double s = 0.0;
      for (std::int64_t k = 0; k < c; ++k) s += acc[p * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)];
      map.scores[p] = static_cast<float>(s);
    }
  }
  for (float v : map.scores) {
    if (!std::isfinite(v)) throw AttributionError("attribution map contains non-finite scores");
  }
  map.detector_input = detector_on_output(fn, hazy, region, cfg.detector_weight);
  map.detector_baseline = detector_on_output(fn, baseline, region, cfg.detector_weight);
  return map;
}

AttributionMap compute_dam(const DehazeModel& model, const ImageTensor& hazy, const ImageTensor& baseline,
                           const AttributionRegion& region, const DamConfig& cfg) {
  if (model.config().precision != DType::f32) {
    throw AttributionError("attribution requires an fp32 model; gradients are not propagated at fp16");
  }
  if (hazy.channels != model.config().encoder.in_channels) {
    throw std::invalid_argument("compute_dam: image has " + std::to_string(hazy.channels) + " channels, model expects " +
                                std::to_string(model.config().encoder.in_channels));
  }
  AttributionMap map =
      compute_dam([&model](const Tensor& x) { return model.forward(x); }, hazy, baseline, region, cfg);
  map.model_checksum = model.checksum();
  return map;
}

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

fs::path sidecar_path(const fs::path& p) { return fs::path(p.string() + ".json"); }

}  // namespace

void save_attribution(const AttributionMap& map, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::size_t bytes = map.scores.size() * sizeof(float);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write attribution map " + path.string());
    out.write(reinterpret_cast<const char*>(map.scores.data()), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("failed writing attribution map " + path.string());
  }
  json j{{"height", map.height},
         {"width", map.width},
         {"channels", map.channels},
         {"dtype", "float32-le"},
         {"region", {{"x", map.region.x}, {"y", map.region.y}, {"l", map.region.l}}},
         {"steps", map.steps},
         {"step_weighting", to_string(map.weighting)},
         {"model_checksum", hex(map.model_checksum)},
         {"scores_checksum", hex(fnv1a(map.scores.data(), bytes))},
         {"detector_input", map.detector_input},
         {"detector_baseline", map.detector_baseline},
         {"total", map.total()}};
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  side << j.dump(2) << '\n';
}

AttributionMap load_attribution(const fs::path& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw std::runtime_error("cannot read " + sidecar_path(path).string());
  const json j = json::parse(side);
  AttributionMap map;
  map.height = j.at("height").get<std::int64_t>();
  map.width = j.at("width").get<std::int64_t>();
  map.channels = j.at("channels").get<std::int64_t>();
  map.region = {j.at("region").at("x").get<std::int64_t>(), j.at("region").at("y").get<std::int64_t>(),
                j.at("region").at("l").get<std::int64_t>()};
  map.steps = j.at("steps").get<std::int64_t>();
  map.weighting = step_weighting_from_string(j.at("step_weighting").get<std::string>());
  map.model_checksum = std::stoull(j.at("model_checksum").get<std::string>(), nullptr, 16);
  map.detector_input = j.at("detector_input").get<double>();
  map.detector_baseline = j.at("detector_baseline").get<double>();
  map.scores.resize(static_cast<std::size_t>(map.height * map.width * map.channels));
  std::ifstream in(path, std::ios::binary);
  const std::size_t bytes = map.scores.size() * sizeof(float);
  if (!in.read(reinterpret_cast<char*>(map.scores.data()), static_cast<std::streamsize>(bytes))) {
    throw std::runtime_error("attribution map " + path.string() + " is truncated");
  }
  if (hex(fnv1a(map.scores.data(), bytes)) != j.at("scores_checksum").get<std::string>()) {
    throw std::runtime_error("attribution map " + path.string() + " does not match its checksum");
  }
  return map;
}

}  // namespace tessera
