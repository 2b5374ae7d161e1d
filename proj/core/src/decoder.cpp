#include "tessera/decoder.hpp"

#include <memory>
#include <stdexcept>

#include "minibatch.hpp"
#include "tessera/ops.hpp"

namespace tessera {

std::vector<std::string> validate_config(const DecoderConfig& c, const EncoderConfig& e) {
  std::vector<std::string> v;
  if (c.upsample_kind != "transposed_conv") v.push_back("decoder.upsample_kind: only transposed_conv is supported");
  if (c.mini_batch_size < 1) v.push_back("decoder.mini_batch_size: must be >= 1");
  if (!c.stage_depths.empty() && c.stage_depths.size() != e.stage_depths.size()) {
    v.push_back("decoder.stage_depths: stage count " + std::to_string(c.stage_depths.size()) +
                " differs from encoder stage count " + std::to_string(e.stage_depths.size()));
  }
  if (c.head_channels < 0) v.push_back("decoder.head_channels: must be >= 0");
  if (c.out_channels < 1) v.push_back("decoder.out_channels: must be >= 1");
  return v;
}

Decoder::Decoder(const EncoderConfig& enc, const DecoderConfig& cfg, Rng& rng) : enc_(enc), cfg_(cfg) {
  const auto violations = validate_config(cfg, enc);
  if (!violations.empty()) throw std::invalid_argument("invalid decoder config: " + violations.front());
  const std::int64_t stages = enc.num_stages();
  const auto& depths = cfg.stage_depths.empty() ? enc.stage_depths : cfg.stage_depths;
  for (std::int64_t s = 0; s < stages; ++s) {
    const std::int64_t dim = enc.stage_dim(s);
    fuse_.emplace_back(2 * dim, dim, rng);
    const std::int64_t heads = enc.windowed() ? enc.num_heads[static_cast<std::size_t>(s)] : 1;
    stages_.emplace_back(enc.windowed(), dim, depths[static_cast<std::size_t>(s)], heads, enc.stage_window(s),
                         enc.mlp_ratio, rng);
    if (s + 1 < stages) expand_.emplace_back(enc.stage_dim(s + 1), dim, 2, rng);
  }
  const std::int64_t head_ch = cfg.head_channels > 0 ? cfg.head_channels : enc.embed_dim;
  final_expand_ = PatchExpand(enc.embed_dim, head_ch, static_cast<int>(enc.embed_stride), rng);
  head_ = nn::Conv2d(head_ch, cfg.out_channels, 3, 1, 1, rng);
}

Tensor Decoder::forward(const Tensor& tokens, const std::vector<Tensor>& skips) const {
  const std::int64_t stages = enc_.num_stages();
  if (static_cast<std::int64_t>(skips.size()) != stages) {
    throw std::invalid_argument("decoder needs " + std::to_string(stages) + " skip stages, got " +
                                std::to_string(skips.size()));
  }
  Tensor x = tokens;
  for (std::int64_t s = stages - 1; s >= 0; --s) {
    const auto us = static_cast<std::size_t>(s);
    if (s < stages - 1) x = expand_[us](x);
    x = fuse_[us](ops::concat({x, skips[us]}, 3));
    x = stages_[us](x);
  }
  x = ops::gelu(final_expand_(x));
  return ops::clamp(head_(x), 0.0f, 1.0f);
}

void Decoder::params(const std::string& prefix, nn::ParamRefs& out) {
  for (std::size_t s = fuse_.size(); s-- > 0;) {
    if (s < expand_.size()) expand_[s].params(prefix + ".expand" + std::to_string(s), out);
    fuse_[s].params(prefix + ".fuse" + std::to_string(s), out);
    stages_[s].params(prefix + ".stage" + std::to_string(s), out);
  }
  final_expand_.params(prefix + ".final_expand", out);
  head_.params(prefix + ".head", out);
}

Tensor decode_patches(const Decoder& decoder, const GlobalSequence& seq, const SkipCache& skips,
                      std::int64_t mini_batch_size) {
  const std::int64_t n = seq.num_patches;
  if (n < 1 || n * seq.token_spatial * seq.token_spatial != seq.total_tokens()) {
    throw std::invalid_argument("token provenance does not cover every patch");
  }
  for (std::size_t s = 0; s < skips.stages.size(); ++s) {
    if (!skips.stages[s].defined() || skips.stages[s].size(0) != n) {
      throw std::invalid_argument("skip stage " + std::to_string(s) + " does not cover all " + std::to_string(n) +
                                  " patches");
    }
  }
  const std::int64_t mb = mini_batch_size > 0 ? mini_batch_size : decoder.config().mini_batch_size;
  const Tensor tokens = unflatten_tokens(seq).tokens;
  std::int64_t patch = 0, channels = decoder.config().out_channels;
  std::unique_ptr<detail::Collector> sized;
  for (std::int64_t start = 0; start < n; start += mb) {
    const std::int64_t len = std::min(mb, n - start);
    std::vector<Tensor> skip_mb;
    for (const auto& s : skips.stages) skip_mb.push_back(ops::slice(s, 0, start, len));
    Tensor y = decoder.forward(ops::slice(tokens, 0, start, len), skip_mb);
    if (!sized) {
      patch = y.size(1);
      sized = std::make_unique<detail::Collector>(Domain::host, Shape{n, patch, patch, channels});
    }
    sized->append(y);
  }
  return sized->finish();
}

}  // namespace tessera
