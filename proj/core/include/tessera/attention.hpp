#pragma once

#include <cstdint>
#include <string>

#include "tessera/tensor.hpp"

namespace tessera {

enum class AttentionMode { exact, approximate };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& name);

struct ApproxParams {
  /// Angular LSH buckets used to sort keys into blocks (power of two).
  std::int64_t hash_buckets = 256;
  /// Keys per block; also the exact-fallback threshold.
  std::int64_t block_size = 64;
  /// Rank cap of the per-block covariance correction; 0 = no cap.
  std::int64_t low_rank = 16;
  /// Blocks attended exactly per query.
  std::int64_t routed_blocks = 8;
  /// Upper clip on the second-order block score correction.
  float moment_clip = 1.0f;
  std::uint64_t seed = 0x6c736801;
};

/// Scaled dot-product softmax attention for one head: q [n, d], k [m, d],
/// v [m, dv]. Queries are processed `query_chunk` rows at a time (0 = all),
/// which bounds the score buffer to chunk x m.
Tensor exact_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t query_chunk = 0);

/// Sub-quadratic approximation of exact_attention. Keys are ordered by an
/// angular LSH code and cut into blocks. Each query attends exactly to the
/// keys of its highest-scoring blocks; every other block contributes one
/// summary term built from its key mean, count and (rank-limited) key
/// covariance, with a first-order value correction. Falls back to
/// exact_attention when m <= block_size.
Tensor approximate_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ApproxParams& params,
                             std::int64_t query_chunk = 0);

Tensor attention(AttentionMode mode, const Tensor& q, const Tensor& k, const Tensor& v, const ApproxParams& params,
                 std::int64_t query_chunk = 0);

}  // namespace tessera
