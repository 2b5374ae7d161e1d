#include "tessera/attention.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "minibatch.hpp"
#include "tessera/ops.hpp"
#include "tessera/random.hpp"

namespace tessera {

std::string to_string(AttentionMode mode) { return mode == AttentionMode::exact ? "exact" : "approximate"; }

AttentionMode attention_mode_from_string(const std::string& name) {
  if (name == "exact") return AttentionMode::exact;
  if (name == "approximate") return AttentionMode::approximate;
  throw std::invalid_argument("unknown attention mode '" + name + "' (exact, approximate)");
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.size(1) != k.size(1) || k.size(0) != v.size(0)) {
    throw std::invalid_argument("attention expects q [n, d], k [m, d], v [m, dv]; got " + to_string(q.shape()) +
                                ", " + to_string(k.shape()) + ", " + to_string(v.shape()));
  }
}

template <typename F>
Tensor over_query_chunks(const Tensor& q, std::int64_t chunk, std::int64_t dv, F f) {
  const std::int64_t n = q.size(0);
  if (chunk <= 0 || chunk >= n) return f(q);
  detail::Collector out(default_domain(), {n, dv});
  for (std::int64_t s = 0; s < n; s += chunk) out.append(f(ops::slice(q, 0, s, std::min(chunk, n - s))));
  return out.finish();
}

// Position of each code in the reflected binary (Gray) sequence, so that
// neighbouring ranks differ in a single hyperplane bit.
std::uint64_t gray_rank(std::uint64_t c) {
  std::uint64_t r = c;
  for (std::uint64_t s = c >> 1; s; s >>= 1) r ^= s;
  return r;
}

struct KeyBlocks {
  std::int64_t num_blocks = 0;
  std::int64_t block = 0;
  std::vector<std::int64_t> padded_order;  // [num_blocks * block] key row, or m for padding
  std::vector<float> counts;
};

KeyBlocks sort_keys(const Tensor& k, const ApproxParams& p) {
  const std::int64_t m = k.size(0), d = k.size(1);
  int bits = 0;
  while ((std::int64_t{1} << (bits + 1)) <= std::max<std::int64_t>(p.hash_buckets, 1)) ++bits;
  Rng rng(p.seed);
  std::vector<float> planes(static_cast<std::size_t>(bits * d));
  for (auto& x : planes) x = static_cast<float>(rng.normal());
  std::vector<std::uint64_t> rank(static_cast<std::size_t>(m));
  const float* pk = k.data();
  for (std::int64_t i = 0; i < m; ++i) {
    std::uint64_t code = 0;
    for (int b = 0; b < bits; ++b) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < d; ++j) dot += double(pk[i * d + j]) * planes[static_cast<std::size_t>(b * d + j)];
      if (dot > 0.0) code |= std::uint64_t{1} << b;
    }
    rank[static_cast<std::size_t>(i)] = gray_rank(code);
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return rank[static_cast<std::size_t>(a)] < rank[static_cast<std::size_t>(b)]; });
  KeyBlocks kb;
  kb.block = p.block_size;
  kb.num_blocks = (m + p.block_size - 1) / p.block_size;
  kb.padded_order.assign(static_cast<std::size_t>(kb.num_blocks * kb.block), m);
  std::copy(order.begin(), order.end(), kb.padded_order.begin());
  kb.counts.resize(static_cast<std::size_t>(kb.num_blocks));
  for (std::int64_t b = 0; b < kb.num_blocks; ++b) {
    kb.counts[static_cast<std::size_t>(b)] = static_cast<float>(std::min(kb.block, m - b * kb.block));
  }
  return kb;
}

// Projector onto the top-r eigenvectors of each block covariance, [nb, d, d].
Tensor rank_projectors(const Tensor& cov, std::int64_t r) {
  const std::int64_t nb = cov.size(0), d = cov.size(1);
  std::vector<float> out(static_cast<std::size_t>(nb * d * d));
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  for (std::int64_t b = 0; b < nb; ++b) {
    Mat c(d, d);
    for (std::int64_t i = 0; i < d; ++i)
      for (std::int64_t j = 0; j < d; ++j) c(i, j) = cov.data()[(b * d + i) * d + j];
    Eigen::SelfAdjointEigenSolver<Mat> es(c);
    const Mat u = es.eigenvectors().rightCols(r);  // eigenvalues ascend
    const Mat proj = u * u.transpose();
    for (std::int64_t i = 0; i < d; ++i)
      for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>((b * d + i) * d + j)] = static_cast<float>(proj(i, j));
  }
  return Tensor::from_data({nb, d, d}, std::move(out));
}

struct BlockSummary {
  KeyBlocks blocks;
  Tensor keys;        // [nb * bs, d], sorted, zero padded
  Tensor values;      // [nb * bs, dv]
  Tensor key_mean;    // [nb, d]
  Tensor value_mean;  // [nb, dv]
  Tensor log_count;   // [nb]
  Tensor cov_flat;    // [nb, d * d]
  Tensor svk_flat;    // [nb * d, dv], rows (block, key dim)
  Tensor pad_bias;    // [nb * bs], 0 for keys, -inf-like for padding
};

BlockSummary summarize(const Tensor& k, const Tensor& v, const ApproxParams& p) {
  const std::int64_t m = k.size(0), d = k.size(1), dv = v.size(1);
  BlockSummary s;
  s.blocks = sort_keys(k, p);
  const std::int64_t nb = s.blocks.num_blocks, bs = s.blocks.block;
  Tensor k_ext = ops::concat({k, Tensor::zeros({1, d})}, 0);
  Tensor v_ext = ops::concat({v, Tensor::zeros({1, dv})}, 0);
  s.keys = ops::gather_rows(k_ext, s.blocks.padded_order);
  s.values = ops::gather_rows(v_ext, s.blocks.padded_order);

  std::vector<float> mask(static_cast<std::size_t>(nb * bs));
  std::vector<float> pad(static_cast<std::size_t>(nb * bs));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool real = s.blocks.padded_order[i] < m;
    mask[i] = real ? 1.0f : 0.0f;
    pad[i] = real ? 0.0f : -1e30f;
  }
  Tensor mask_t = Tensor::from_data({nb, bs, 1}, mask);
  s.pad_bias = Tensor::from_data({nb * bs}, pad);
  std::vector<float> inv(s.blocks.counts.size()), logc(s.blocks.counts.size());
  for (std::size_t b = 0; b < inv.size(); ++b) {
    inv[b] = 1.0f / s.blocks.counts[b];
    logc[b] = std::log(s.blocks.counts[b]);
  }
  Tensor inv_count = Tensor::from_data({nb, 1, 1}, inv);
  s.log_count = Tensor::from_data({nb}, logc);

  Tensor kb = s.keys.reshape({nb, bs, d});
  Tensor vb = s.values.reshape({nb, bs, dv});
  Tensor kmean = ops::mul(ops::sum_axis(kb, 1, true), inv_count);  // [nb, 1, d]
  Tensor vmean = ops::mul(ops::sum_axis(vb, 1, true), inv_count);
  Tensor kc = ops::mul(ops::sub(kb, kmean), mask_t);
  Tensor vc = ops::mul(ops::sub(vb, vmean), mask_t);
  Tensor cov = ops::mul(ops::matmul(kc, kc, true, false), inv_count);  // [nb, d, d]
  Tensor svk = ops::mul(ops::matmul(kc, vc, true, false), inv_count);  // [nb, d, dv] = Cov(k, v)
  if (p.low_rank > 0 && p.low_rank < d) {
    Tensor proj = rank_projectors(cov.detach(), p.low_rank);
    cov = ops::matmul(ops::matmul(proj, cov), proj);
    svk = ops::matmul(proj, svk);
  }
  s.key_mean = kmean.reshape({nb, d});
  s.value_mean = vmean.reshape({nb, dv});
  s.cov_flat = cov.reshape({nb, d * d});
  s.svk_flat = svk.reshape({nb * d, dv});
  return s;
}

Tensor attend_blocks(const BlockSummary& s, const Tensor& q, const ApproxParams& p) {
  const std::int64_t n = q.size(0), d = q.size(1);
  const std::int64_t nb = s.blocks.num_blocks, bs = s.blocks.block;
  const std::int64_t dv = s.values.size(1);
  const std::int64_t routed = std::min(p.routed_blocks, nb);

  // Block scores: q.mean + log(count) + min(q^T C q / 2, clip).
  Tensor qq = ops::mul(q.reshape({n, d, 1}), q.reshape({n, 1, d})).reshape({n, d * d});
  Tensor quad = ops::mul_scalar(ops::matmul(qq, s.cov_flat, false, true), 0.5f);
  quad = ops::clamp(quad, -1e30f, p.moment_clip);
  Tensor scores = ops::add(ops::add(ops::matmul(q, s.key_mean, false, true), s.log_count), quad);  // [n, nb]

  std::vector<std::int64_t> key_rows(static_cast<std::size_t>(n * routed * bs));
  std::vector<float> excluded(static_cast<std::size_t>(n * nb), 0.0f);
  std::vector<float> key_bias(static_cast<std::size_t>(n * routed * bs));
  {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nb));
    const float* sc = scores.data();
    const float* pad = s.pad_bias.data();
    for (std::int64_t i = 0; i < n; ++i) {
      std::iota(idx.begin(), idx.end(), 0);
      const float* row = sc + i * nb;
      std::partial_sort(idx.begin(), idx.begin() + routed, idx.end(), [&](std::int64_t a, std::int64_t b) {
        return row[a] > row[b] || (row[a] == row[b] && a < b);
      });
      for (std::int64_t r = 0; r < routed; ++r) {
        const std::int64_t b = idx[static_cast<std::size_t>(r)];
        excluded[static_cast<std::size_t>(i * nb + b)] = -1e30f;
        for (std::int64_t j = 0; j < bs; ++j) {
          const auto at = static_cast<std::size_t>((i * routed + r) * bs + j);
          key_rows[at] = b * bs + j;
          key_bias[at] = pad[b * bs + j];
        }
      }
    }
  }
  const std::int64_t width = routed * bs;
  Tensor kr = ops::gather_rows(s.keys, key_rows).reshape({n, width, d});
  Tensor vr = ops::gather_rows(s.values, key_rows).reshape({n, width, dv});
  Tensor exact_logits = ops::matmul(q.reshape({n, 1, d}), kr, false, true).reshape({n, width});
  exact_logits = ops::add(exact_logits, Tensor::from_data({n, width}, std::move(key_bias)));
  Tensor summary_logits = ops::add(scores, Tensor::from_data({n, nb}, std::move(excluded)));

  Tensor w = ops::softmax_lastdim(ops::concat({exact_logits, summary_logits}, 1));
  Tensor w_exact = ops::slice(w, 1, 0, width);
  Tensor w_sum = ops::slice(w, 1, width, nb);
  Tensor out = ops::matmul(w_exact.reshape({n, 1, width}), vr).reshape({n, dv});
  out = ops::add(out, ops::matmul(w_sum, s.value_mean));
  Tensor wq = ops::mul(w_sum.reshape({n, nb, 1}), q.reshape({n, 1, d})).reshape({n, nb * d});
  return ops::add(out, ops::matmul(wq, s.svk_flat));
}

}  // namespace

Tensor exact_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t query_chunk) {
  check_qkv(q, k, v);
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.size(1)));
  return over_query_chunks(q, query_chunk, v.size(1), [&](const Tensor& qc) {
    Tensor s = ops::mul_scalar(ops::matmul(qc, k, false, true), scale);
    return ops::matmul(ops::softmax_lastdim(s), v);
  });
}

Tensor approximate_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ApproxParams& params,
                             std::int64_t query_chunk) {
  check_qkv(q, k, v);
  if (params.block_size < 1 || params.routed_blocks < 1) {
    throw std::invalid_argument("approximate attention needs block_size >= 1 and routed_blocks >= 1");
  }
  if (k.size(0) <= params.block_size) return exact_attention(q, k, v, query_chunk);
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.size(1)));
  const BlockSummary summary = summarize(k, v, params);
  return over_query_chunks(q, query_chunk, v.size(1),
                           [&](const Tensor& qc) { return attend_blocks(summary, ops::mul_scalar(qc, scale), params); });
}

Tensor attention(AttentionMode mode, const Tensor& q, const Tensor& k, const Tensor& v, const ApproxParams& params,
                 std::int64_t query_chunk) {
  return mode == AttentionMode::exact ? exact_attention(q, k, v, query_chunk)
                                      : approximate_attention(q, k, v, params, query_chunk);
}

}  // namespace tessera
