#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tessera/random.hpp"
#include "tessera/tensor.hpp"

namespace tessera::nn {

/// Mutable views of named parameters; pointers stay valid while the owning
/// module is alive and not moved.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Trainable leaf, truncated-normal initialized.
Tensor trunc_normal_param(const Shape& shape, Rng& rng, double stddev = 0.02);
Tensor constant_param(const Shape& shape, float value);

struct Linear {
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamRefs& out);

  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
};

struct LayerNorm {
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamRefs& out);

  Tensor gain;
  Tensor bias;
};

struct RMSNorm {
  RMSNorm() = default;
  explicit RMSNorm(std::int64_t dim, float eps = 1e-6f);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamRefs& out);

  Tensor gain;
  float eps = 1e-6f;
};

/// NHWC convolution with weight [k, k, in, out].
struct Conv2d {
  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, ParamRefs& out);

  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

}  // namespace tessera::nn
