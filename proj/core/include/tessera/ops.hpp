#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tessera/tensor.hpp"

/// Differentiable tensor operations. All results are fresh contiguous tensors
/// in the current default domain.
namespace tessera::ops {

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// tanh approximation.
Tensor gelu(const Tensor& x);
/// Gradient is zero where the input was clipped.
Tensor clamp(const Tensor& x, float lo, float hi);

/// Reduces a broadcast gradient back onto `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

/// Batched matrix product over trailing two dims. `b` may be rank 2, in which
/// case it is shared by every batch entry of `a`.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
/// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
/// Selects rows of x viewed as [x.size(0), rest...]; backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows);
/// Inverse of gather_rows: out[rows[i]] += x[i], out has `num_rows` rows.
Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> rows, std::int64_t num_rows);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// gain may be undefined (treated as ones).
Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps = 1e-6f);
Tensor l2_normalize(const Tensor& x, float eps = 1e-12f);

/// x[B, H, W, C] -> [B, H/f, W/f, f*f*C]; channel order (dy, dx, c).
Tensor space_to_depth(const Tensor& x, int factor);
/// Inverse of space_to_depth.
Tensor depth_to_space(const Tensor& x, int factor);
/// NHWC convolution, weight[kh, kw, cin, cout], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

}  // namespace tessera::ops
