#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/haze.hpp"

namespace tessera {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  /// Paths as written; relative ones resolve against the manifest directory.
  std::string clear;
  std::string hazy;
  std::string split;  // train | test
  HazeParams params;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::string& path) const;
  std::vector<ManifestEntry> split(const std::string& name) const;
};

struct SynthConfig {
  HazeDistribution haze;
  /// Fraction of inputs assigned to the train split.
  double split_ratio = 0.8;
  std::uint64_t seed = 7;
  /// 8 or 16.
  int bit_depth = 16;
};

/// Hazes every readable image in `clear_dir` (sorted by name) into
/// `out_dir/hazy/` and writes `out_dir/manifest.jsonl`. Unreadable files are
/// skipped with a warning.
Manifest build_dataset_manifest(const std::filesystem::path& clear_dir, const std::filesystem::path& out_dir,
                                const SynthConfig& cfg);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Recomputes the hazy image of an entry from its clear image and parameters.
ImageTensor regenerate_hazy(const Manifest& manifest, const ManifestEntry& entry);

}  // namespace tessera
