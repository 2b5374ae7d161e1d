#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tessera/attention.hpp"
#include "tessera/encoder.hpp"
#include "tessera/nn.hpp"

namespace tessera {

struct BottleneckConfig {
  std::int64_t depth = 2;
  std::int64_t num_heads = 12;
  /// 0 inside a ModelConfig resolves to the encoder token dim.
  std::int64_t token_dim = 0;
  AttentionMode attention_mode = AttentionMode::approximate;
  ApproxParams approx;
  /// learned_2d | none
  std::string positional_embedding = "learned_2d";
  /// Largest patch-grid extent the learned row/column tables cover.
  std::int64_t max_grid = 64;
  float ffn_ratio = 4.0f;
  /// Rows processed at a time outside of training (bounds transients).
  std::int64_t token_chunk = 1024;
  /// Query rows per attention call outside of training.
  std::int64_t attention_chunk = 128;
};

std::vector<std::string> validate_config(const BottleneckConfig& cfg);

/// Tokens of all patches flattened row-major: token t belongs to patch
/// t / token_spatial^2 at intra-patch position t % token_spatial^2.
struct GlobalSequence {
  Tensor tokens;  // [total_tokens, token_dim]
  std::int64_t num_patches = 0;
  std::int64_t token_spatial = 0;
  std::int64_t grid_rows = 0;
  std::int64_t grid_cols = 0;

  std::int64_t total_tokens() const { return tokens.size(0); }
  std::int64_t patch_index(std::int64_t t) const { return t / (token_spatial * token_spatial); }
  std::int64_t intra_position(std::int64_t t) const { return t % (token_spatial * token_spatial); }
};

GlobalSequence flatten_tokens(const TokenSequence& seq);
TokenSequence unflatten_tokens(const GlobalSequence& seq);

/// gain * x / sqrt(mean(x^2) + eps) over the last axis.
Tensor rms_normalize(const Tensor& x, const Tensor& gain, float eps);

struct BottleneckBlock {
  BottleneckBlock() = default;
  BottleneckBlock(std::int64_t dim, std::int64_t hidden, Rng& rng);
  void params(const std::string& prefix, nn::ParamRefs& out);

  nn::RMSNorm attn_norm;
  nn::Linear q, k, v, proj;
  nn::RMSNorm ffn_norm;
  nn::Linear gate, up, down;  // SwiGLU: down(silu(gate x) * up x)
};

class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const BottleneckConfig& cfg, std::int64_t token_spatial, Rng& rng);

  const BottleneckConfig& config() const { return cfg_; }
  GlobalSequence forward(const GlobalSequence& seq) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  std::vector<BottleneckBlock>& blocks() { return blocks_; }

 private:
  Tensor positions(const GlobalSequence& seq, std::int64_t start, std::int64_t len) const;
  Tensor block_forward(const BottleneckBlock& b, const Tensor& x) const;

  BottleneckConfig cfg_;
  std::int64_t token_spatial_ = 0;
  Tensor row_embedding_;    // [max_grid, D]
  Tensor col_embedding_;    // [max_grid, D]
  Tensor intra_embedding_;  // [token_spatial^2, D]
  std::vector<BottleneckBlock> blocks_;
};

GlobalSequence bottleneck_forward(const Bottleneck& bottleneck, const GlobalSequence& seq);

}  // namespace tessera
