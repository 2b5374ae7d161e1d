#pragma once

#include <cstdint>

#include "tessera/tensor.hpp"

// Raw kernels shared by op implementations. Not part of the public surface.
namespace tessera::kernels {

/// C[M,N] (+)= op(A) op(B). A is stored [M,K] (or [K,M] when transposed),
/// B is stored [K,N] (or [N,K] when transposed). All row-major.
void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate);

/// Product of extents before `axis`, the extent itself, and after it.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};
AxisSplit split_at(const Shape& shape, int axis);

int normalize_axis(int axis, int rank);

}  // namespace tessera::kernels
