#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/attribution.hpp"
#include "tessera/manifest.hpp"
#include "tessera/model.hpp"
#include "tessera/training.hpp"

namespace tessera {

/// Everything a command can be configured with. Model keys mirror
/// ModelConfig field names ("encoder.patch_size", "precision"); the other
/// sections are prefixed "train.", "synth." and "attribute.".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  DamConfig attribute;
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& message, std::string key = {}, std::vector<std::string> suggestions = {});

  const std::string& key() const noexcept { return key_; }
  const std::vector<std::string>& suggestions() const noexcept { return suggestions_; }

 private:
  std::string key_;
  std::vector<std::string> suggestions_;
};

/// Every settable key in document order.
const std::vector<std::string>& config_keys();
/// Closest known keys by edit distance.
std::vector<std::string> nearest_keys(const std::string& key, std::size_t count = 3);

/// `value` is parsed as JSON when possible, otherwise taken as a string.
/// Setting encoder.backbone first loads that backbone's widths, depths,
/// heads and window.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Flat JSON object of key -> value; encoder.backbone is applied first.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
/// "key=value" items, applied after any encoder.backbone item.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// Flat JSON with keys in document order.
std::string config_to_json(const RunConfig& cfg, int indent = 2);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// FNV-1a 64 of the compact JSON form.
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace tessera
