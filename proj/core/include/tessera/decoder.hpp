#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tessera/blocks.hpp"
#include "tessera/bottleneck.hpp"
#include "tessera/encoder.hpp"

namespace tessera {

struct DecoderConfig {
  /// Only transposed_conv is implemented.
  std::string upsample_kind = "transposed_conv";
  std::int64_t mini_batch_size = 4;
  /// Per-stage block counts, shallow to deep; empty mirrors the encoder.
  std::vector<std::int64_t> stage_depths;
  /// Width of the full-resolution map feeding the output head; 0 = embed_dim.
  std::int64_t head_channels = 0;
  std::int64_t out_channels = 3;
};

std::vector<std::string> validate_config(const DecoderConfig& cfg, const EncoderConfig& encoder);

class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderConfig& encoder, const DecoderConfig& cfg, Rng& rng);

  const DecoderConfig& config() const { return cfg_; }
  /// One mini-batch: tokens [B, ts, ts, D] and per-stage skips -> patches
  /// [B, p, p, out_channels] clamped to [0, 1].
  Tensor forward(const Tensor& tokens, const std::vector<Tensor>& skips) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  nn::Conv2d& head() { return head_; }

 private:
  EncoderConfig enc_;
  DecoderConfig cfg_;
  std::vector<nn::Linear> fuse_;
  std::vector<BlockStack> stages_;
  std::vector<PatchExpand> expand_;  // expand_[s]: stage s+1 -> stage s
  PatchExpand final_expand_;
  nn::Conv2d head_;
};

/// Decodes every patch in sequential mini-batches; skips are uploaded per
/// mini-batch and the output patches are staged on the host. `mini_batch_size`
/// 0 uses the decoder config.
Tensor decode_patches(const Decoder& decoder, const GlobalSequence& seq, const SkipCache& skips,
                      std::int64_t mini_batch_size = 0);

}  // namespace tessera
