#include "tessera/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tessera/random.hpp"

namespace tessera {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

fs::path Manifest::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : root / p;
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

json entry_json(const ManifestEntry& e) {
  json j;
  j["clear"] = e.clear;
  j["hazy"] = e.hazy;
  j["split"] = e.split;
  j["seed"] = e.params.seed;
  j["airlight"] = e.params.airlight;
  j["coverage"] = e.params.coverage;
  j["intensity"] = e.params.intensity;
  j["t_min"] = e.params.t_min;
  return j;
}

}  // namespace

Manifest build_dataset_manifest(const fs::path& clear_dir, const fs::path& out_dir, const SynthConfig& cfg) {
  if (!fs::is_directory(clear_dir)) throw ManifestError("clear image directory not found: " + clear_dir.string());
  if (cfg.split_ratio < 0.0 || cfg.split_ratio > 1.0) throw ManifestError("split ratio must lie in [0, 1]");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(clear_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  struct Loaded {
    fs::path path;
    ImageTensor image;
  };
  std::vector<Loaded> loaded;
  for (const auto& f : files) {
    try {
      loaded.push_back({f, load_image(f)});
    } catch (const ImageIOError& e) {
      spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
    }
  }
  if (loaded.empty()) throw ManifestError("no readable clear images in " + clear_dir.string());

  const auto n = static_cast<std::int64_t>(loaded.size());
  const auto train_count = static_cast<std::int64_t>(std::floor(cfg.split_ratio * static_cast<double>(n) + 0.5));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(Rng::derive(cfg.seed, {0x73706c6974}));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[shuffle.below(static_cast<std::uint64_t>(i + 1))]);
  }
  std::vector<std::string> split(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) split[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r < train_count ? "train" : "test";

  fs::create_directories(out_dir / "hazy");
  Manifest m;
  m.root = out_dir;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& item = loaded[static_cast<std::size_t>(i)];
    ManifestEntry e;
    e.clear = fs::absolute(item.path).lexically_normal().string();
    e.hazy = (fs::path("hazy") / (item.path.stem().string() + ".png")).string();
    e.split = split[static_cast<std::size_t>(i)];
    e.params = sample_haze_params(cfg.haze, item.image.channels, Rng::derive(cfg.seed, {static_cast<std::uint64_t>(i)}));
    save_image(synthesize_haze(item.image, e.params), m.resolve(e.hazy), cfg.bit_depth);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) out << entry_json(e).dump() << '\n';
  if (!out) throw ManifestError("failed writing manifest " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.clear = j.at("clear").get<std::string>();
      e.hazy = j.at("hazy").get<std::string>();
      e.split = j.value("split", std::string("train"));
      e.params.seed = j.at("seed").get<std::uint64_t>();
      e.params.airlight = j.at("airlight").get<std::vector<float>>();
      e.params.coverage = j.at("coverage").get<float>();
      e.params.intensity = j.at("intensity").get<float>();
      e.params.t_min = j.value("t_min", 0.05f);
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (m.entries.empty()) throw ManifestError("manifest " + path.string() + " lists no pairs");
  return m;
}

ImageTensor regenerate_hazy(const Manifest& manifest, const ManifestEntry& entry) {
  return synthesize_haze(load_image(manifest.resolve(entry.clear)), entry.params);
}

}  // namespace tessera
