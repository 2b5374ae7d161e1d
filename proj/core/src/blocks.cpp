#include "tessera/blocks.hpp"

#include <cmath>
#include <limits>

#include "tessera/ops.hpp"

namespace tessera {

namespace {

struct WindowPlan {
  std::vector<std::int64_t> forward;  // windowed row -> source row
  std::vector<std::int64_t> inverse;  // source row -> windowed row
};

// Rows of a [B*H*W, C] view regrouped into [B*nW, w*w, C] windows after
// rolling by -shift on both axes.
WindowPlan make_window_plan(std::int64_t batch, std::int64_t side, std::int64_t w, std::int64_t shift) {
  const std::int64_t nw = side / w;
  WindowPlan plan;
  plan.forward.resize(static_cast<std::size_t>(batch * side * side));
  plan.inverse.resize(plan.forward.size());
  std::size_t p = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t wy = 0; wy < nw; ++wy) {
      for (std::int64_t wx = 0; wx < nw; ++wx) {
        for (std::int64_t iy = 0; iy < w; ++iy) {
          for (std::int64_t ix = 0; ix < w; ++ix) {
            const std::int64_t y = (wy * w + iy + shift) % side;
            const std::int64_t x = (wx * w + ix + shift) % side;
            const std::int64_t src = (b * side + y) * side + x;
            plan.forward[p] = src;
            plan.inverse[static_cast<std::size_t>(src)] = static_cast<std::int64_t>(p);
            ++p;
          }
        }
      }
    }
  }
  return plan;
}

std::vector<std::int64_t> relative_index(std::int64_t w) {
  const std::int64_t n = w * w;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t dy = i / w - j / w + w - 1;
      const std::int64_t dx = i % w - j % w + w - 1;
      idx[static_cast<std::size_t>(i * n + j)] = dy * (2 * w - 1) + dx;
    }
  }
  return idx;
}

// [nW, 1, w*w, w*w] additive mask keeping attention inside the regions that
// were contiguous before the cyclic shift.
Tensor shift_mask(std::int64_t side, std::int64_t w, std::int64_t shift) {
  const std::int64_t nw = side / w;
  const std::int64_t n = w * w;
  auto region = [&](std::int64_t c) { return c < side - w ? 0 : (c < side - shift ? 1 : 2); };
  std::vector<float> m(static_cast<std::size_t>(nw * nw * n * n), 0.0f);
  for (std::int64_t wy = 0; wy < nw; ++wy) {
    for (std::int64_t wx = 0; wx < nw; ++wx) {
      const std::int64_t base = (wy * nw + wx) * n * n;
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t ri = region(wy * w + i / w) * 3 + region(wx * w + i % w);
        for (std::int64_t j = 0; j < n; ++j) {
          const std::int64_t rj = region(wy * w + j / w) * 3 + region(wx * w + j % w);
          if (ri != rj) m[static_cast<std::size_t>(base + i * n + j)] = -100.0f;
        }
      }
    }
  }
  return Tensor::from_data({nw * nw, 1, n, n}, std::move(m));
}

}  // namespace

WindowBlock::WindowBlock(std::int64_t d, std::int64_t h, std::int64_t w, bool s, float mlp_ratio, Rng& rng)
    : dim(d),
      heads(h),
      window(w),
      shifted(s),
      qkv(d, 3 * d, rng),
      proj(d, d, rng),
      norm1(d),
      fc1(d, static_cast<std::int64_t>(std::lround(mlp_ratio * static_cast<float>(d))), rng),
      fc2(static_cast<std::int64_t>(std::lround(mlp_ratio * static_cast<float>(d))), d, rng),
      norm2(d),
      logit_scale(nn::constant_param({h, 1, 1}, std::log(10.0f))),
      relative_bias(nn::trunc_normal_param({(2 * w - 1) * (2 * w - 1), h}, rng)) {}

Tensor WindowBlock::attention(const Tensor& windows, std::int64_t batch, std::int64_t side) const {
  const std::int64_t bw = windows.size(0);
  const std::int64_t n = windows.size(1);
  const std::int64_t hd = dim / heads;
  Tensor qkv_out = qkv(windows).reshape({bw, n, 3, heads, hd});
  Tensor parts = ops::permute(qkv_out, {2, 0, 3, 1, 4});
  auto part = [&](int i) { return ops::slice(parts, 0, i, 1).reshape({bw, heads, n, hd}); };
  Tensor q = ops::l2_normalize(part(0));
  Tensor k = ops::l2_normalize(part(1));
  Tensor v = part(2);
  Tensor attn = ops::matmul(q, k, false, true);
  Tensor scale = ops::exp(ops::clamp(logit_scale, -std::numeric_limits<float>::infinity(), std::log(100.0f)));
  attn = ops::mul(attn, scale);
  const auto rel = relative_index(window);
  Tensor bias = ops::permute(ops::gather_rows(relative_bias, rel).reshape({n, n, heads}), {2, 0, 1});
  attn = ops::add(attn, bias);
  if (shifted) {
    const std::int64_t nw = (side / window) * (side / window);
    attn = ops::add(attn.reshape({batch, nw, heads, n, n}), shift_mask(side, window, window / 2))
               .reshape({bw, heads, n, n});
  }
  attn = ops::softmax_lastdim(attn);
  Tensor out = ops::permute(ops::matmul(attn, v), {0, 2, 1, 3}).reshape({bw, n, dim});
  return proj(out);
}

Tensor WindowBlock::operator()(const Tensor& x) const {
  const std::int64_t b = x.size(0);
  const std::int64_t side = x.size(1);
  const auto plan = make_window_plan(b, side, window, shifted ? window / 2 : 0);
  Tensor rows = x.reshape({b * side * side, dim});
  Tensor windows = ops::gather_rows(rows, plan.forward).reshape({-1, window * window, dim});
  Tensor attended = attention(windows, b, side).reshape({b * side * side, dim});
  Tensor restored = ops::gather_rows(attended, plan.inverse).reshape(x.shape());
  Tensor y = ops::add(x, norm1(restored));
  return ops::add(y, norm2(fc2(ops::gelu(fc1(y)))));
}

void WindowBlock::params(const std::string& prefix, nn::ParamRefs& out) {
  qkv.params(prefix + ".qkv", out);
  proj.params(prefix + ".proj", out);
  norm1.params(prefix + ".norm1", out);
  fc1.params(prefix + ".fc1", out);
  fc2.params(prefix + ".fc2", out);
  norm2.params(prefix + ".norm2", out);
  out.emplace_back(prefix + ".logit_scale", &logit_scale);
  out.emplace_back(prefix + ".relative_bias", &relative_bias);
}

ResidualConvBlock::ResidualConvBlock(std::int64_t dim, Rng& rng)
    : conv1(dim, dim, 3, 1, 1, rng), conv2(dim, dim, 3, 1, 1, rng) {}

Tensor ResidualConvBlock::operator()(const Tensor& x) const {
  return ops::add(x, conv2(ops::gelu(conv1(x))));
}

void ResidualConvBlock::params(const std::string& prefix, nn::ParamRefs& out) {
  conv1.params(prefix + ".conv1", out);
  conv2.params(prefix + ".conv2", out);
}

BlockStack::BlockStack(bool windowed, std::int64_t dim, std::int64_t depth, std::int64_t heads,
                       std::int64_t window, float mlp_ratio, Rng& rng) {
  for (std::int64_t i = 0; i < depth; ++i) {
    if (windowed) window_blocks.emplace_back(dim, heads, window, i % 2 == 1, mlp_ratio, rng);
    else conv_blocks.emplace_back(dim, rng);
  }
}

Tensor BlockStack::operator()(Tensor x) const {
  for (const auto& b : window_blocks) x = b(x);
  for (const auto& b : conv_blocks) x = b(x);
  return x;
}

void BlockStack::params(const std::string& prefix, nn::ParamRefs& out) {
  for (std::size_t i = 0; i < window_blocks.size(); ++i) window_blocks[i].params(prefix + "." + std::to_string(i), out);
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) conv_blocks[i].params(prefix + "." + std::to_string(i), out);
}

PatchEmbed::PatchEmbed(std::int64_t in_channels, std::int64_t dim, int s, Rng& rng)
    : stride(s), proj(in_channels * s * s, dim, rng), norm(dim) {}

Tensor PatchEmbed::operator()(const Tensor& x) const { return norm(proj(ops::space_to_depth(x, stride))); }

void PatchEmbed::params(const std::string& prefix, nn::ParamRefs& out) {
  proj.params(prefix + ".proj", out);
  norm.params(prefix + ".norm", out);
}

PatchMerge::PatchMerge(std::int64_t dim, Rng& rng) : reduction(4 * dim, 2 * dim, rng, false), norm(2 * dim) {}

Tensor PatchMerge::operator()(const Tensor& x) const { return norm(reduction(ops::space_to_depth(x, 2))); }

void PatchMerge::params(const std::string& prefix, nn::ParamRefs& out) {
  reduction.params(prefix + ".reduction", out);
  norm.params(prefix + ".norm", out);
}

Tensor patch_expand(const Tensor& x, const nn::Linear& proj, int scale) {
  return ops::depth_to_space(proj(x), scale);
}

PatchExpand::PatchExpand(std::int64_t in_dim, std::int64_t out_dim, int s, Rng& rng)
    : scale(s), proj(in_dim, out_dim * s * s, rng) {}

Tensor PatchExpand::operator()(const Tensor& x) const { return patch_expand(x, proj, scale); }

void PatchExpand::params(const std::string& prefix, nn::ParamRefs& out) { proj.params(prefix + ".proj", out); }

}  // namespace tessera
