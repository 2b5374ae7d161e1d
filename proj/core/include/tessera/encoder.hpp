#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tessera/blocks.hpp"
#include "tessera/tiling.hpp"

namespace tessera {

struct EncoderConfig {
  /// swin_t | swin_s | swin_b | swin_l select the windowed-attention family,
  /// cnn selects residual convolution blocks.
  std::string backbone = "swin_t";
  std::int64_t patch_size = 256;
  std::int64_t in_channels = 3;
  std::int64_t embed_dim = 96;
  std::vector<std::int64_t> stage_depths{2, 2, 6, 2};
  std::vector<std::int64_t> num_heads{3, 6, 12, 24};
  std::int64_t window_size = 8;
  std::int64_t embed_stride = 4;
  std::int64_t mini_batch_size = 4;
  float mlp_ratio = 4.0f;

  std::int64_t num_stages() const { return static_cast<std::int64_t>(stage_depths.size()); }
  std::int64_t downsample_factor_total() const;
  std::int64_t token_spatial() const { return patch_size / downsample_factor_total(); }
  std::int64_t token_dim() const { return stage_dim(num_stages() - 1); }
  std::int64_t stage_dim(std::int64_t s) const { return embed_dim << s; }
  std::int64_t stage_spatial(std::int64_t s) const { return patch_size / (embed_stride << s); }
  std::int64_t stage_window(std::int64_t s) const;
  bool windowed() const { return backbone != "cnn"; }
};

/// Widths, depths and heads of a named backbone size.
EncoderConfig encoder_preset(const std::string& backbone);

/// Empty iff the config is usable.
std::vector<std::string> validate_config(const EncoderConfig& cfg);

struct TokenSequence {
  Tensor tokens;  // [num_patches, token_spatial, token_spatial, token_dim]
  std::int64_t grid_rows = 0;
  std::int64_t grid_cols = 0;

  std::int64_t num_patches() const { return tokens.size(0); }
};

struct SkipCache {
  std::vector<Tensor> stages;  // [num_patches, spatial_s, spatial_s, dim_s], host domain
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  /// One mini-batch [B, p, p, C] -> per-stage outputs; the last is the token map.
  std::vector<Tensor> forward(const Tensor& patches) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

 private:
  EncoderConfig cfg_;
  PatchEmbed embed_;
  std::vector<PatchMerge> merges_;
  std::vector<BlockStack> stages_;
};

/// Runs the encoder over patches in sequential mini-batches. Tokens stay in
/// the device domain, skips are staged on the host. `mini_batch_size` 0 uses
/// the encoder config.
std::pair<TokenSequence, SkipCache> encode_patches(const Encoder& encoder, const PatchBatch& batch,
                                                   std::int64_t mini_batch_size = 0);

}  // namespace tessera
