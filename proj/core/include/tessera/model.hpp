#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tessera/bottleneck.hpp"
#include "tessera/decoder.hpp"
#include "tessera/encoder.hpp"
#include "tessera/image.hpp"

namespace tessera {

struct ModelConfig {
  EncoderConfig encoder;
  BottleneckConfig bottleneck;
  DecoderConfig decoder;
  DType precision = DType::f32;
  /// Weight initialization seed.
  std::uint64_t seed = 0;

  /// Fills derived fields (bottleneck.token_dim 0 -> encoder token dim).
  ModelConfig resolved() const;
};

std::vector<std::string> validate_config(const ModelConfig& cfg);

/// Small profile used by tests, benchmarks and the smoke training run:
/// 64 px patches, three windowed stages (16/32/64 wide), 4x4 tokens of 64
/// channels, two bottleneck blocks with four heads.
ModelConfig toy_config();

class StageOutOfMemory : public std::runtime_error {
 public:
  StageOutOfMemory(std::string stage, std::int64_t tokens, const OutOfMemory& cause);

  const std::string& stage() const noexcept { return stage_; }
  std::int64_t token_count() const noexcept { return tokens_; }
  std::size_t requested() const noexcept { return requested_; }
  std::size_t budget() const noexcept { return budget_; }

 private:
  std::string stage_;
  std::int64_t tokens_;
  std::size_t requested_;
  std::size_t budget_;
};

struct StageReport {
  std::string stage;  // partition | encode | bottleneck | decode | reassemble
  std::size_t device_peak = 0;
  std::size_t host_peak = 0;
  double seconds = 0.0;
};

struct RuntimeOptions {
  /// 0 = use the configured sizes.
  std::int64_t encoder_mini_batch = 0;
  std::int64_t decoder_mini_batch = 0;
  std::function<void(const StageReport&)> on_stage;
};

class DehazeModel {
 public:
  explicit DehazeModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  const Bottleneck& bottleneck() const { return bottleneck_; }
  const Decoder& decoder() const { return decoder_; }
  Bottleneck& bottleneck() { return bottleneck_; }
  Decoder& decoder() { return decoder_; }

  /// Stable-order mutable views of every weight.
  nn::ParamRefs parameters();
  /// Independent copy with the same weights.
  DehazeModel clone() const;
  /// Re-materializes every weight at the given precision (fp16 rounds and
  /// halves accounted bytes).
  void set_precision(DType precision);

  /// Differentiable end-to-end pass on an [H, W, C] tensor; returns [H, W, C]
  /// in the host domain. Runs under the model precision.
  Tensor forward(const Tensor& image, const RuntimeOptions& opts = {}) const;
  /// Inference without gradient tracking.
  ImageTensor dehaze(const ImageTensor& image, const RuntimeOptions& opts = {}) const;

  /// FNV-1a 64 over parameter names, shapes and values.
  std::uint64_t checksum() const;

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Bottleneck bottleneck_;
  Decoder decoder_;
};

}  // namespace tessera
