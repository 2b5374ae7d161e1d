#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/model.hpp"

namespace tessera {

inline constexpr std::int64_t kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, parse, version, shape_mismatch, config };

  CheckpointError(Kind kind, const std::string& message, std::vector<std::string> keys = {});

  Kind kind() const noexcept { return kind_; }
  /// Offending tensor names for shape mismatches.
  const std::vector<std::string>& keys() const noexcept { return keys_; }

 private:
  Kind kind_;
  std::vector<std::string> keys_;
};

struct TrainingMetadata {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  /// Free-form extra fields, stored as strings.
  std::map<std::string, std::string> extra;
};

struct LoadedCheckpoint {
  DehazeModel model;
  TrainingMetadata metadata;
};

/// Single file: "TSRCKPT\0", u64 header length, JSON header (format_version,
/// config, tensors with name/dtype/shape/offset, metadata), then the
/// little-endian float32 arrays. Written to a temporary file and renamed.
void save_checkpoint(const DehazeModel& model, const std::filesystem::path& path, const TrainingMetadata& meta = {});
/// Validates everything before returning; never yields a partial model.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tessera
