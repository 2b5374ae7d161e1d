#include "tessera/nn.hpp"

#include "tessera/ops.hpp"

namespace tessera::nn {

Tensor trunc_normal_param(const Shape& shape, Rng& rng, double stddev) {
  std::vector<float> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<float>(rng.trunc_normal(stddev));
  Tensor t = Tensor::from_data(shape, std::move(values));
  t.set_requires_grad();
  return t;
}

Tensor constant_param(const Shape& shape, float value) {
  Tensor t = Tensor::full(shape, value);
  t.set_requires_grad();
  return t;
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias)
    : weight(trunc_normal_param({out, in}, rng)) {
  if (with_bias) bias = constant_param({out}, 0.0f);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

void Linear::params(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".weight", &weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", &bias);
}

LayerNorm::LayerNorm(std::int64_t dim) : gain(constant_param({dim}, 1.0f)), bias(constant_param({dim}, 0.0f)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }

void LayerNorm::params(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".gain", &gain);
  out.emplace_back(prefix + ".bias", &bias);
}

RMSNorm::RMSNorm(std::int64_t dim, float e) : gain(constant_param({dim}, 1.0f)), eps(e) {}

Tensor RMSNorm::operator()(const Tensor& x) const { return ops::rms_norm(x, gain, eps); }

void RMSNorm::params(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".gain", &gain);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int s, int p, Rng& rng)
    : weight(trunc_normal_param({kernel, kernel, in, out}, rng)),
      bias(constant_param({out}, 0.0f)),
      stride(s),
      padding(p) {}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

void Conv2d::params(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

}  // namespace tessera::nn
