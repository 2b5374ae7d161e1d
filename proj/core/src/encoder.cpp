#include "tessera/encoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "minibatch.hpp"
#include "tessera/ops.hpp"

namespace tessera {

std::int64_t EncoderConfig::downsample_factor_total() const {
  if (stage_depths.empty() || embed_stride < 1) return 0;
  return embed_stride << (num_stages() - 1);
}

std::int64_t EncoderConfig::stage_window(std::int64_t s) const {
  return std::min(window_size, stage_spatial(s));
}

EncoderConfig encoder_preset(const std::string& backbone) {
  EncoderConfig c;
  c.backbone = backbone;
  if (backbone == "swin_t") {
    c.embed_dim = 96;
    c.stage_depths = {2, 2, 6, 2};
    c.num_heads = {3, 6, 12, 24};
  } else if (backbone == "swin_s") {
    c.embed_dim = 96;
    c.stage_depths = {2, 2, 18, 2};
    c.num_heads = {3, 6, 12, 24};
  } else if (backbone == "swin_b") {
    c.embed_dim = 128;
    c.stage_depths = {2, 2, 18, 2};
    c.num_heads = {4, 8, 16, 32};
  } else if (backbone == "swin_l") {
    c.embed_dim = 192;
    c.stage_depths = {2, 2, 18, 2};
    c.num_heads = {6, 12, 24, 48};
  } else if (backbone == "cnn") {
    c.embed_dim = 96;
    c.stage_depths = {2, 2, 2, 2};
    c.num_heads = {1, 1, 1, 1};
  } else {
    throw std::invalid_argument("unknown backbone '" + backbone + "' (swin_t, swin_s, swin_b, swin_l, cnn)");
  }
  return c;
}

std::vector<std::string> validate_config(const EncoderConfig& c) {
  std::vector<std::string> v;
  const std::vector<std::string> kinds{"swin_t", "swin_s", "swin_b", "swin_l", "cnn"};
  if (std::find(kinds.begin(), kinds.end(), c.backbone) == kinds.end()) {
    v.push_back("backbone: unknown kind '" + c.backbone + "'");
  }
  if (c.mini_batch_size < 1) v.push_back("mini_batch_size: must be >= 1 (positivity)");
  if (c.patch_size < 16) v.push_back("patch_size: must be >= 16");
  if (c.in_channels != 1 && c.in_channels != 3) v.push_back("in_channels: must be 1 or 3");
  if (c.embed_dim < 1) v.push_back("embed_dim: must be >= 1 (positivity)");
  if (c.embed_stride < 1) v.push_back("embed_stride: must be >= 1 (positivity)");
  if (c.mlp_ratio <= 0.0f) v.push_back("mlp_ratio: must be > 0 (positivity)");
  if (c.stage_depths.empty()) {
    v.push_back("stage_depths: at least one stage required");
    return v;
  }
  for (auto d : c.stage_depths) {
    if (d < 0) v.push_back("stage_depths: entries must be >= 0");
  }
  const std::int64_t ds = c.downsample_factor_total();
  if (ds < 1 || c.patch_size % ds != 0) {
    v.push_back("patch_size: " + std::to_string(c.patch_size) + " not divisible by total downsample factor " +
                std::to_string(ds) + " (divisibility)");
    return v;
  }
  if (c.windowed()) {
    if (c.num_heads.size() != c.stage_depths.size()) {
      v.push_back("num_heads: needs one entry per stage");
      return v;
    }
    if (c.window_size < 1) v.push_back("window_size: must be >= 1 (positivity)");
    for (std::int64_t s = 0; s < c.num_stages(); ++s) {
      const auto heads = c.num_heads[static_cast<std::size_t>(s)];
      if (heads < 1 || c.stage_dim(s) % heads != 0) {
        v.push_back("num_heads[" + std::to_string(s) + "]: must divide stage width " + std::to_string(c.stage_dim(s)));
      }
      if (c.window_size >= 1 && c.stage_spatial(s) % c.stage_window(s) != 0) {
        v.push_back("window_size: stage " + std::to_string(s) + " extent " + std::to_string(c.stage_spatial(s)) +
                    " not divisible by window " + std::to_string(c.stage_window(s)));
      }
    }
  }
  return v;
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto violations = validate_config(cfg);
  if (!violations.empty()) throw std::invalid_argument("invalid encoder config: " + violations.front());
  embed_ = PatchEmbed(cfg.in_channels, cfg.embed_dim, static_cast<int>(cfg.embed_stride), rng);
  for (std::int64_t s = 0; s < cfg.num_stages(); ++s) {
    if (s > 0) merges_.emplace_back(cfg.stage_dim(s - 1), rng);
    const std::int64_t heads = cfg.windowed() ? cfg.num_heads[static_cast<std::size_t>(s)] : 1;
    stages_.emplace_back(cfg.windowed(), cfg.stage_dim(s), cfg.stage_depths[static_cast<std::size_t>(s)], heads,
                         cfg.stage_window(s), cfg.mlp_ratio, rng);
  }
}

std::vector<Tensor> Encoder::forward(const Tensor& patches) const {
  if (patches.rank() != 4 || patches.size(1) != cfg_.patch_size || patches.size(2) != cfg_.patch_size ||
      patches.size(3) != cfg_.in_channels) {
    throw std::invalid_argument("encoder expects [B, " + std::to_string(cfg_.patch_size) + ", " +
                                std::to_string(cfg_.patch_size) + ", " + std::to_string(cfg_.in_channels) +
                                "] patches, got " + to_string(patches.shape()));
  }
  std::vector<Tensor> outputs;
  Tensor x = embed_(patches);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) x = merges_[s - 1](x);
    x = stages_[s](x);
    outputs.push_back(x);
  }
  return outputs;
}

void Encoder::params(const std::string& prefix, nn::ParamRefs& out) {
  embed_.params(prefix + ".embed", out);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) merges_[s - 1].params(prefix + ".merge" + std::to_string(s), out);
    stages_[s].params(prefix + ".stage" + std::to_string(s), out);
  }
}

std::pair<TokenSequence, SkipCache> encode_patches(const Encoder& encoder, const PatchBatch& batch,
                                                   std::int64_t mini_batch_size) {
  const auto& cfg = encoder.config();
  const std::int64_t mb = mini_batch_size > 0 ? mini_batch_size : cfg.mini_batch_size;
  const std::int64_t n = batch.patches.size(0);
  if (batch.patches.size(1) != cfg.patch_size) {
    throw std::invalid_argument("patch size " + std::to_string(batch.patches.size(1)) +
                                " does not match encoder patch_size " + std::to_string(cfg.patch_size));
  }
  const auto stages = static_cast<std::size_t>(cfg.num_stages());
  detail::Collector tokens(Domain::device, {n, cfg.token_spatial(), cfg.token_spatial(), cfg.token_dim()});
  std::vector<detail::Collector> skips;
  for (std::size_t s = 0; s < stages; ++s) {
    const auto sp = cfg.stage_spatial(static_cast<std::int64_t>(s));
    skips.emplace_back(Domain::host, Shape{n, sp, sp, cfg.stage_dim(static_cast<std::int64_t>(s))});
  }
  for (std::int64_t start = 0; start < n; start += mb) {
    const std::int64_t len = std::min(mb, n - start);
    Tensor chunk = ops::slice(batch.patches, 0, start, len);
    auto outs = encoder.forward(chunk);
    tokens.append(outs.back());
    for (std::size_t s = 0; s < stages; ++s) skips[s].append(outs[s]);
  }
  TokenSequence seq{tokens.finish(), batch.layout.grid_rows, batch.layout.grid_cols};
  SkipCache cache;
  for (auto& s : skips) cache.stages.push_back(s.finish());
  return {seq, cache};
}

}  // namespace tessera
