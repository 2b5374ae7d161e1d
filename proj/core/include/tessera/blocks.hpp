#pragma once

#include <cstdint>
#include <vector>

#include "tessera/nn.hpp"

namespace tessera {

/// Hierarchical windowed-attention block with cosine attention, learned
/// relative position bias and post-normalized residual branches. Operates
/// on [B, H, W, C] maps with H == W.
struct WindowBlock {
  WindowBlock() = default;
  WindowBlock(std::int64_t dim, std::int64_t heads, std::int64_t window, bool shifted, float mlp_ratio, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  std::int64_t dim = 0;
  std::int64_t heads = 1;
  std::int64_t window = 1;
  bool shifted = false;

  nn::Linear qkv;
  nn::Linear proj;
  nn::LayerNorm norm1;
  nn::Linear fc1;
  nn::Linear fc2;
  nn::LayerNorm norm2;
  Tensor logit_scale;     // [heads, 1, 1], log space
  Tensor relative_bias;   // [(2w-1)^2, heads]

 private:
  Tensor attention(const Tensor& windows, std::int64_t batch, std::int64_t side) const;
};

/// conv3x3 -> GELU -> conv3x3 with identity shortcut.
struct ResidualConvBlock {
  ResidualConvBlock() = default;
  ResidualConvBlock(std::int64_t dim, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  nn::Conv2d conv1;
  nn::Conv2d conv2;
};

/// A run of blocks of one backbone family at a fixed width.
struct BlockStack {
  BlockStack() = default;
  BlockStack(bool windowed, std::int64_t dim, std::int64_t depth, std::int64_t heads, std::int64_t window,
             float mlp_ratio, Rng& rng);

  Tensor operator()(Tensor x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  std::vector<WindowBlock> window_blocks;
  std::vector<ResidualConvBlock> conv_blocks;
};

/// Non-overlapping strided embedding: space_to_depth -> linear -> norm.
struct PatchEmbed {
  PatchEmbed() = default;
  PatchEmbed(std::int64_t in_channels, std::int64_t dim, int stride, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  int stride = 1;
  nn::Linear proj;
  nn::LayerNorm norm;
};

/// 2x2 neighborhood gather -> linear(4C -> 2C) -> norm.
struct PatchMerge {
  PatchMerge() = default;
  PatchMerge(std::int64_t dim, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  nn::Linear reduction;
  nn::LayerNorm norm;
};

/// Learned transposed convolution with kernel == stride == scale:
/// linear(C_in -> scale^2 * C_out) followed by depth_to_space.
struct PatchExpand {
  PatchExpand() = default;
  PatchExpand(std::int64_t in_dim, std::int64_t out_dim, int scale, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamRefs& out);

  int scale = 2;
  nn::Linear proj;  // weight rows ordered (dy, dx, c_out)
};

/// Shared by PatchExpand; exposed for direct testing.
Tensor patch_expand(const Tensor& x, const nn::Linear& proj, int scale);

}  // namespace tessera
