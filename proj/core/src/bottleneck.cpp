#include "tessera/bottleneck.hpp"

#include <cmath>
#include <stdexcept>

#include "minibatch.hpp"
#include "tessera/ops.hpp"

namespace tessera {

std::vector<std::string> validate_config(const BottleneckConfig& c) {
  std::vector<std::string> v;
  if (c.depth < 1) v.push_back("bottleneck.depth: must be >= 1");
  if (c.token_dim < 1) v.push_back("bottleneck.token_dim: must be >= 1");
  if (c.num_heads < 1 || c.token_dim % c.num_heads != 0) {
    v.push_back("bottleneck.num_heads: must divide token_dim " + std::to_string(c.token_dim));
  }
  if (c.positional_embedding != "learned_2d" && c.positional_embedding != "none") {
    v.push_back("bottleneck.positional_embedding: must be learned_2d or none");
  }
  if (c.max_grid < 1) v.push_back("bottleneck.max_grid: must be >= 1");
  if (c.token_chunk < 1) v.push_back("bottleneck.token_chunk: must be >= 1");
  if (c.attention_chunk < 1) v.push_back("bottleneck.attention_chunk: must be >= 1");
  if (c.ffn_ratio <= 0.0f) v.push_back("bottleneck.ffn_ratio: must be > 0");
  if (c.approx.block_size < 1) v.push_back("bottleneck.approx.block_size: must be >= 1");
  if (c.approx.hash_buckets < 1) v.push_back("bottleneck.approx.hash_buckets: must be >= 1");
  if (c.approx.low_rank < 0) v.push_back("bottleneck.approx.low_rank: must be >= 0");
  if (c.approx.routed_blocks < 1) v.push_back("bottleneck.approx.routed_blocks: must be >= 1");
  return v;
}

GlobalSequence flatten_tokens(const TokenSequence& seq) {
  GlobalSequence g;
  g.num_patches = seq.tokens.size(0);
  g.token_spatial = seq.tokens.size(1);
  g.grid_rows = seq.grid_rows;
  g.grid_cols = seq.grid_cols;
  g.tokens = seq.tokens.reshape({-1, seq.tokens.size(3)});
  return g;
}

TokenSequence unflatten_tokens(const GlobalSequence& g) {
  return {g.tokens.reshape({g.num_patches, g.token_spatial, g.token_spatial, g.tokens.size(1)}), g.grid_rows,
          g.grid_cols};
}

Tensor rms_normalize(const Tensor& x, const Tensor& gain, float eps) {
  if (eps <= 0.0f) throw std::invalid_argument("rms_normalize: eps must be > 0");
  return ops::rms_norm(x, gain, eps);
}

BottleneckBlock::BottleneckBlock(std::int64_t dim, std::int64_t hidden, Rng& rng)
    : attn_norm(dim),
      q(dim, dim, rng),
      k(dim, dim, rng),
      v(dim, dim, rng),
      proj(dim, dim, rng),
      ffn_norm(dim),
      gate(dim, hidden, rng, false),
      up(dim, hidden, rng, false),
      down(hidden, dim, rng, false) {}

void BottleneckBlock::params(const std::string& prefix, nn::ParamRefs& out) {
  attn_norm.params(prefix + ".attn_norm", out);
  q.params(prefix + ".q", out);
  k.params(prefix + ".k", out);
  v.params(prefix + ".v", out);
  proj.params(prefix + ".proj", out);
  ffn_norm.params(prefix + ".ffn_norm", out);
  gate.params(prefix + ".gate", out);
  up.params(prefix + ".up", out);
  down.params(prefix + ".down", out);
}

Bottleneck::Bottleneck(const BottleneckConfig& cfg, std::int64_t token_spatial, Rng& rng)
    : cfg_(cfg), token_spatial_(token_spatial) {
  const auto violations = validate_config(cfg);
  if (!violations.empty()) throw std::invalid_argument("invalid bottleneck config: " + violations.front());
  const std::int64_t d = cfg.token_dim;
  if (cfg.positional_embedding == "learned_2d") {
    row_embedding_ = nn::trunc_normal_param({cfg.max_grid, d}, rng);
    col_embedding_ = nn::trunc_normal_param({cfg.max_grid, d}, rng);
    intra_embedding_ = nn::trunc_normal_param({token_spatial * token_spatial, d}, rng);
  }
  const auto hidden = static_cast<std::int64_t>(std::lround(cfg.ffn_ratio * static_cast<float>(d)));
  for (std::int64_t i = 0; i < cfg.depth; ++i) blocks_.emplace_back(d, hidden, rng);
}

void Bottleneck::params(const std::string& prefix, nn::ParamRefs& out) {
  if (row_embedding_.defined()) {
    out.emplace_back(prefix + ".row_embedding", &row_embedding_);
    out.emplace_back(prefix + ".col_embedding", &col_embedding_);
    out.emplace_back(prefix + ".intra_embedding", &intra_embedding_);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].params(prefix + ".block" + std::to_string(i), out);
}

Tensor Bottleneck::positions(const GlobalSequence& seq, std::int64_t start, std::int64_t len) const {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(len)), cols(rows.size()), intra(rows.size());
  for (std::int64_t i = 0; i < len; ++i) {
    const std::int64_t t = start + i;
    const std::int64_t p = seq.patch_index(t);
    rows[static_cast<std::size_t>(i)] = p / seq.grid_cols;
    cols[static_cast<std::size_t>(i)] = p % seq.grid_cols;
    intra[static_cast<std::size_t>(i)] = seq.intra_position(t);
  }
  Tensor e = ops::add(ops::gather_rows(row_embedding_, rows), ops::gather_rows(col_embedding_, cols));
  return ops::add(e, ops::gather_rows(intra_embedding_, intra));
}

namespace {

// Rows [start, start + len) of a linear layer's output features.
nn::Linear output_rows(const nn::Linear& l, std::int64_t start, std::int64_t len) {
  nn::Linear sub;
  sub.weight = ops::slice(l.weight, 0, start, len);
  if (l.bias.defined()) sub.bias = ops::slice(l.bias, 0, start, len);
  return sub;
}

}  // namespace

Tensor Bottleneck::block_forward(const BottleneckBlock& b, const Tensor& x) const {
  const std::int64_t t = x.size(0), d = cfg_.token_dim;
  const std::int64_t chunk = grad_enabled() ? t : cfg_.token_chunk;
  const std::int64_t heads = cfg_.num_heads, hd = d / heads;

  auto chunked = [&](const Tensor& src, std::int64_t width, auto&& f) {
    if (chunk >= t) return f(src);
    detail::Collector out(default_domain(), {t, width});
    for (std::int64_t s = 0; s < t; s += chunk) out.append(f(ops::slice(src, 0, s, std::min(chunk, t - s))));
    return out.finish();
  };

  Tensor normed = chunked(x, d, [&](const Tensor& xc) { return b.attn_norm(xc); });
  std::vector<Tensor> head_out;
  Tensor merged;
  if (!grad_enabled()) merged = Tensor::empty({t, d});
  for (std::int64_t h = 0; h < heads; ++h) {
    const nn::Linear qh = output_rows(b.q, h * hd, hd), kh = output_rows(b.k, h * hd, hd),
                     vh = output_rows(b.v, h * hd, hd);
    Tensor o = attention(cfg_.attention_mode, chunked(normed, hd, qh), chunked(normed, hd, kh),
                         chunked(normed, hd, vh), cfg_.approx,
                         grad_enabled() ? t : cfg_.attention_chunk);
    if (grad_enabled()) {
      head_out.push_back(o);
    } else {
      for (std::int64_t r = 0; r < t; ++r) std::copy(o.data() + r * hd, o.data() + (r + 1) * hd, merged.data() + r * d + h * hd);
    }
  }
  normed = Tensor();
  if (grad_enabled()) merged = heads == 1 ? head_out.front() : ops::concat(head_out, 1);
  head_out.clear();

  if (chunk >= t) {
    Tensor y = ops::add(x, b.proj(merged));
    Tensor hn = b.ffn_norm(y);
    return ops::add(y, b.down(ops::mul(ops::silu(b.gate(hn)), b.up(hn))));
  }
  detail::Collector out(default_domain(), {t, d});
  for (std::int64_t s = 0; s < t; s += chunk) {
    const std::int64_t len = std::min(chunk, t - s);
    Tensor y = ops::add(ops::slice(x, 0, s, len), b.proj(ops::slice(merged, 0, s, len)));
    Tensor hn = b.ffn_norm(y);
    out.append(ops::add(y, b.down(ops::mul(ops::silu(b.gate(hn)), b.up(hn)))));
  }
  return out.finish();
}

GlobalSequence Bottleneck::forward(const GlobalSequence& seq) const {
  if (seq.tokens.rank() != 2 || seq.tokens.size(1) != cfg_.token_dim) {
    throw std::invalid_argument("bottleneck expects token_dim " + std::to_string(cfg_.token_dim) + ", got " +
                                to_string(seq.tokens.shape()));
  }
  if (seq.num_patches * seq.token_spatial * seq.token_spatial != seq.total_tokens() ||
      seq.grid_rows * seq.grid_cols != seq.num_patches) {
    throw std::invalid_argument("global sequence provenance does not cover its tokens");
  }
  Tensor x = seq.tokens;
  if (row_embedding_.defined()) {
    if (seq.token_spatial != token_spatial_) {
      throw std::invalid_argument("token spatial extent " + std::to_string(seq.token_spatial) +
                                  " differs from configured " + std::to_string(token_spatial_));
    }
    if (seq.grid_rows > cfg_.max_grid || seq.grid_cols > cfg_.max_grid) {
      throw std::invalid_argument("patch grid " + std::to_string(seq.grid_rows) + "x" + std::to_string(seq.grid_cols) +
                                  " exceeds bottleneck.max_grid " + std::to_string(cfg_.max_grid));
    }
    const std::int64_t t = x.size(0);
    const std::int64_t chunk = grad_enabled() ? t : cfg_.token_chunk;
    detail::Collector out(default_domain(), {t, cfg_.token_dim});
    for (std::int64_t s = 0; s < t; s += chunk) {
      const std::int64_t len = std::min(chunk, t - s);
      out.append(ops::add(ops::slice(x, 0, s, len), positions(seq, s, len)));
    }
    x = out.finish();
  }
  for (const auto& b : blocks_) x = block_forward(b, x);
  GlobalSequence result = seq;
  result.tokens = x;
  return result;
}

GlobalSequence bottleneck_forward(const Bottleneck& bottleneck, const GlobalSequence& seq) {
  return bottleneck.forward(seq);
}

}  // namespace tessera
