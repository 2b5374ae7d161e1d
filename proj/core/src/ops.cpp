#include "tessera/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kernels.hpp"

namespace tessera::kernels {

void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate) {
  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMat> C(c, m, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  Eigen::Map<const RowMat> A(a, transpose_a ? k : m, transpose_a ? m : k);
  Eigen::Map<const RowMat> B(b, transpose_b ? n : k, transpose_b ? k : n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (!transpose_a && !transpose_b) run(A, B);
  else if (transpose_a && !transpose_b) run(A.transpose(), B);
  else if (!transpose_a && transpose_b) run(A, B.transpose());
  else run(A.transpose(), B.transpose());
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) s.extent = shape[static_cast<std::size_t>(i)];
    else s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace tessera::kernels

namespace tessera::ops {

using kernels::normalize_axis;

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("shapes " + to_string(a) + " and " + to_string(b) +
                                  " are not broadcastable");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

/// Element strides of `in` laid against `out`, zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t offset = r - in.size();
    if (i < offset) break;
    const std::int64_t d = in[i - offset];
    strides[i] = d == 1 ? 0 : s;
    s *= d;
  }
  return strides;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::empty(out_shape);
  float* o = out.data();
  const float* pa = a.data();
  const float* pb = b.data();
  const std::int64_t n = out.numel();
  const std::int64_t na = a.numel();
  const std::int64_t nb = b.numel();
  if (na == n && nb == n) {
    for (std::int64_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  } else if (na == n && is_suffix(b.shape(), out_shape)) {
    for (std::int64_t i = 0; i < n; i += nb) {
      for (std::int64_t j = 0; j < nb; ++j) o[i + j] = f(pa[i + j], pb[j]);
    }
  } else if (nb == n && is_suffix(a.shape(), out_shape)) {
    for (std::int64_t i = 0; i < n; i += na) {
      for (std::int64_t j = 0; j < na; ++j) o[i + j] = f(pa[j], pb[i + j]);
    }
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const std::size_t r = out_shape.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      o[i] = f(pa[oa], pb[ob]);
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < out_shape[d]) {
          oa += sa[d];
          ob += sb[d];
          break;
        }
        oa -= sa[d] * (out_shape[d] - 1);
        ob -= sb[d] * (out_shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  return out;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out = Tensor::empty(x.shape());
  const float* px = x.data();
  float* o = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(px[i]);
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  return broadcast_binary(Tensor::zeros(shape), x, [](float, float v) { return v; });
}

}  // namespace

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (numel(shape) == 0) return Tensor::zeros(shape);
  const Shape xs = x.shape();
  std::vector<double> acc(static_cast<std::size_t>(numel(shape)), 0.0);
  const float* px = x.data();
  const std::int64_t n = x.numel();
  if (is_suffix(shape, xs)) {
    const std::int64_t tn = numel(shape);
    for (std::int64_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i % tn)] += px[i];
  } else {
    const auto st = broadcast_strides(shape, xs);
    const std::size_t r = xs.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ot = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      acc[static_cast<std::size_t>(ot)] += px[i];
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < xs[d]) {
          ot += st[d];
          break;
        }
        ot -= st[d] * (xs[d] - 1);
        idx[d] = 0;
      }
    }
  }
  Tensor out = Tensor::empty(shape);
  std::transform(acc.begin(), acc.end(), out.data(), [](double v) { return static_cast<float>(v); });
  return record(out, {x}, [xs](const Tensor& g) { return std::vector<Tensor>{broadcast_to(g, xs)}; },
                "sum_to");
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](float u, float v) { return u + v; });
  const Shape sa = a.shape(), sb = b.shape();
  return record(out, {a, b},
                [sa, sb](const Tensor& g) { return std::vector<Tensor>{sum_to(g, sa), sum_to(g, sb)}; },
                "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](float u, float v) { return u - v; });
  const Shape sa = a.shape(), sb = b.shape();
  return record(out, {a, b},
                [sa, sb](const Tensor& g) {
                  return std::vector<Tensor>{sum_to(g, sa), neg(sum_to(g, sb))};
                },
                "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](float u, float v) { return u * v; });
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record(out, {a, b},
                [ad, bd, ga, gb](const Tensor& g) {
                  return std::vector<Tensor>{ga ? sum_to(mul(g, bd), ad.shape()) : Tensor(),
                                             gb ? sum_to(mul(g, ad), bd.shape()) : Tensor()};
                },
                "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](float u, float v) { return u / v; });
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record(out, {a, b},
                [ad, bd, ga, gb](const Tensor& g) {
                  Tensor db;
                  if (gb) db = neg(sum_to(div(mul(g, ad), square(bd)), bd.shape()));
                  return std::vector<Tensor>{ga ? sum_to(div(g, bd), ad.shape()) : Tensor(), db};
                },
                "div");
}

Tensor add_scalar(const Tensor& x, float s) {
  return record(map_unary(x, [s](float v) { return v + s; }), {x},
                [](const Tensor& g) { return std::vector<Tensor>{g}; }, "add_scalar");
}

Tensor mul_scalar(const Tensor& x, float s) {
  return record(map_unary(x, [s](float v) { return v * s; }), {x},
                [s](const Tensor& g) { return std::vector<Tensor>{mul_scalar(g, s)}; }, "mul_scalar");
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0f); }

Tensor exp(const Tensor& x) {
  Tensor out = map_unary(x, [](float v) { return std::exp(v); });
  Tensor od = out.detach();
  return record(out, {x}, [od](const Tensor& g) { return std::vector<Tensor>{mul(g, od)}; }, "exp");
}

Tensor log(const Tensor& x) {
  Tensor xd = x.detach();
  return record(map_unary(x, [](float v) { return std::log(v); }), {x},
                [xd](const Tensor& g) { return std::vector<Tensor>{div(g, xd)}; }, "log");
}

Tensor sqrt(const Tensor& x) {
  Tensor out = map_unary(x, [](float v) { return std::sqrt(v); });
  Tensor od = out.detach();
  return record(out, {x},
                [od](const Tensor& g) { return std::vector<Tensor>{div(mul_scalar(g, 0.5f), od)}; },
                "sqrt");
}

Tensor square(const Tensor& x) {
  Tensor xd = x.detach();
  return record(map_unary(x, [](float v) { return v * v; }), {x},
                [xd](const Tensor& g) { return std::vector<Tensor>{mul(g, mul_scalar(xd, 2.0f))}; },
                "square");
}

Tensor abs(const Tensor& x) {
  Tensor xd = x.detach();
  return record(map_unary(x, [](float v) { return std::fabs(v); }), {x},
                [xd](const Tensor& g) {
                  Tensor sign = map_unary(xd, [](float v) { return v > 0.f ? 1.f : (v < 0.f ? -1.f : 0.f); });
                  return std::vector<Tensor>{mul(g, sign)};
                },
                "abs");
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = map_unary(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  Tensor od = out.detach();
  return record(out, {x},
                [od](const Tensor& g) {
                  Tensor d = map_unary(od, [](float s) { return s * (1.0f - s); });
                  return std::vector<Tensor>{mul(g, d)};
                },
                "sigmoid");
}

Tensor silu(const Tensor& x) {
  Tensor xd = x.detach();
  return record(map_unary(x, [](float v) { return v / (1.0f + std::exp(-v)); }), {x},
                [xd](const Tensor& g) {
                  Tensor d = map_unary(xd, [](float v) {
                    const float s = 1.0f / (1.0f + std::exp(-v));
                    return s * (1.0f + v * (1.0f - s));
                  });
                  return std::vector<Tensor>{mul(g, d)};
                },
                "silu");
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor xd = x.detach();
  return record(map_unary(x,
                          [](float v) {
                            return 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
                          }),
                {x},
                [xd](const Tensor& g) {
                  Tensor d = map_unary(xd, [](float v) {
                    const float u = kGeluC * (v + kGeluA * v * v * v);
                    const float t = std::tanh(u);
                    const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
                    return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                  });
                  return std::vector<Tensor>{mul(g, d)};
                },
                "gelu");
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  Tensor xd = x.detach();
  return record(map_unary(x, [lo, hi](float v) { return std::clamp(v, lo, hi); }), {x},
                [xd, lo, hi](const Tensor& g) {
                  Tensor mask = map_unary(xd, [lo, hi](float v) { return (v >= lo && v <= hi) ? 1.f : 0.f; });
                  return std::vector<Tensor>{mul(g, mask)};
                },
                "clamp");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  const Shape xs = x.shape();
  return record(Tensor::scalar(static_cast<float>(acc)), {x},
                [xs](const Tensor& g) { return std::vector<Tensor>{Tensor::full(xs, g.item())}; }, "sum");
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<float>(x.numel());
  return mul_scalar(sum(x), 1.0f / n);
}

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank());
  const auto s = kernels::split_at(x.shape(), axis);
  Shape kept = x.shape();
  kept[static_cast<std::size_t>(axis)] = 1;
  Tensor out = Tensor::empty(kept);
  const float* px = x.data();
  float* o = out.data();
  std::vector<double> acc(static_cast<std::size_t>(s.inner));
  for (std::int64_t a = 0; a < s.outer; ++a) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::int64_t e = 0; e < s.extent; ++e) {
      const float* row = px + (a * s.extent + e) * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) acc[static_cast<std::size_t>(i)] += row[i];
    }
    for (std::int64_t i = 0; i < s.inner; ++i) o[a * s.inner + i] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
  }
  const Shape xs = x.shape();
  out = record(out, {x}, [xs](const Tensor& g) { return std::vector<Tensor>{broadcast_to(g, xs)}; },
               "sum_axis");
  if (keepdim) return out;
  Shape squeezed = x.shape();
  squeezed.erase(squeezed.begin() + axis);
  return out.reshape(squeezed);
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const auto n = static_cast<float>(x.size(axis));
  return mul_scalar(sum_axis(x, axis, keepdim), 1.0f / n);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul needs rank >= 2 operands");
  const std::int64_t m = ta ? a.size(-1) : a.size(-2);
  const std::int64_t k = ta ? a.size(-2) : a.size(-1);
  const std::int64_t kb = tb ? b.size(-1) : b.size(-2);
  const std::int64_t n = tb ? b.size(-2) : b.size(-1);
  if (k != kb) {
    throw std::invalid_argument("matmul inner dims differ: " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  Shape batch(a.shape().begin(), a.shape().end() - 2);
  const bool shared_b = b.rank() == 2;
  if (!shared_b && Shape(b.shape().begin(), b.shape().end() - 2) != batch) {
    throw std::invalid_argument("matmul batch dims differ: " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  const std::int64_t nbatch = numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::empty(out_shape);
  if (shared_b && !ta) {
    kernels::gemm(false, tb, nbatch * m, n, k, a.data(), b.data(), out.data(), false);
  } else {
    for (std::int64_t i = 0; i < nbatch; ++i) {
      kernels::gemm(ta, tb, m, n, k, a.data() + i * m * k, b.data() + (shared_b ? 0 : i * k * n),
                    out.data() + i * m * n, false);
    }
  }
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record(out, {a, b},
                [=](const Tensor& g) {
                  Tensor da, db;
                  if (ga) {
                    da = Tensor::empty(ad.shape());
                    for (std::int64_t i = 0; i < nbatch; ++i) {
                      const float* gi = g.data() + i * m * n;
                      const float* bi = bd.data() + (shared_b ? 0 : i * k * n);
                      float* di = da.data() + i * m * k;
                      if (!ta) {
                        // dA[m,k] = g[m,n] * op(B)^T
                        kernels::gemm(false, !tb, m, k, n, gi, bi, di, false);
                      } else {
                        // dA[k,m] = op(B) * g^T
                        kernels::gemm(tb, true, k, m, n, bi, gi, di, false);
                      }
                    }
                  }
                  if (gb) {
                    db = Tensor::zeros(bd.shape());
                    for (std::int64_t i = 0; i < nbatch; ++i) {
                      const float* gi = g.data() + i * m * n;
                      const float* ai = ad.data() + i * m * k;
                      float* di = db.data() + (shared_b ? 0 : i * k * n);
                      if (!tb) {
                        // dB[k,n] = op(A)^T * g
                        kernels::gemm(!ta, false, k, n, m, ai, gi, di, shared_b);
                      } else {
                        // dB[n,k] = g^T * op(A)
                        kernels::gemm(true, ta, n, k, m, gi, ai, di, shared_b);
                      }
                    }
                  }
                  return std::vector<Tensor>{da, db};
                },
                "matmul");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::int64_t in = weight.size(1);
  const std::int64_t outf = weight.size(0);
  if (x.size(-1) != in) {
    throw std::invalid_argument("linear: input " + to_string(x.shape()) + " vs weight " +
                                to_string(weight.shape()));
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  Tensor out = Tensor::empty(out_shape);
  float* o = out.data();
  if (bias.defined()) {
    const float* pb = bias.data();
    for (std::int64_t r = 0; r < rows; ++r) std::copy(pb, pb + outf, o + r * outf);
  }
  kernels::gemm(false, true, rows, outf, in, x.data(), weight.data(), o, bias.defined());
  Tensor xd = x.detach(), wd = weight.detach();
  const bool gx = x.requires_grad(), gw = weight.requires_grad();
  const bool gbias = bias.defined() && bias.requires_grad();
  return record(out, {x, weight, bias},
                [=](const Tensor& g) {
                  Tensor dx, dw, db;
                  if (gx) {
                    dx = Tensor::empty(xd.shape());
                    kernels::gemm(false, false, rows, in, outf, g.data(), wd.data(), dx.data(), false);
                  }
                  if (gw) {
                    dw = Tensor::empty(wd.shape());
                    kernels::gemm(true, false, outf, in, rows, g.data(), xd.data(), dw.data(), false);
                  }
                  if (gbias) db = sum_to(g.reshape({rows, outf}), {outf});
                  return std::vector<Tensor>{dx, dw, db};
                },
                "linear");
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int r = x.rank();
  if (static_cast<int>(dims.size()) != r) throw std::invalid_argument("permute: rank mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r));
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = s;
    s *= x.shape()[static_cast<std::size_t>(i)];
  }
  std::vector<std::int64_t> strides(static_cast<std::size_t>(r));
  std::vector<int> inverse(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int d = dims[static_cast<std::size_t>(i)];
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(d)];
    strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(d)];
    inverse[static_cast<std::size_t>(d)] = i;
  }
  Tensor out = Tensor::empty(out_shape);
  const float* px = x.data();
  float* o = out.data();
  const std::int64_t n = x.numel();
  if (n > 0) {
    const std::int64_t last = out_shape.back();
    const std::int64_t last_stride = strides.back();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; i += last) {
      for (std::int64_t j = 0; j < last; ++j) o[i + j] = px[off + j * last_stride];
      for (int d = r - 2; d >= 0; --d) {
        auto ud = static_cast<std::size_t>(d);
        if (++idx[ud] < out_shape[ud]) {
          off += strides[ud];
          break;
        }
        off -= strides[ud] * (out_shape[ud] - 1);
        idx[ud] = 0;
      }
    }
  }
  return record(out, {x}, [inverse](const Tensor& g) { return std::vector<Tensor>{permute(g, inverse)}; },
                "permute");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const int r = parts.front().rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = parts.front().shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != r) throw std::invalid_argument("concat rank mismatch");
    Shape probe = p.shape();
    probe[static_cast<std::size_t>(axis)] = 0;
    if (probe != out_shape) throw std::invalid_argument("concat shape mismatch: " + to_string(p.shape()));
    extents.push_back(p.size(axis));
  }
  for (auto e : extents) out_shape[static_cast<std::size_t>(axis)] += e;
  const auto split = kernels::split_at(out_shape, axis);
  Tensor out = Tensor::empty(out_shape);
  float* o = out.data();
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::int64_t chunk = extents[p] * split.inner;
    const float* src = parts[p].data();
    for (std::int64_t a = 0; a < split.outer; ++a) {
      std::copy(src + a * chunk, src + (a + 1) * chunk, o + a * split.extent * split.inner + offset);
    }
    offset += chunk;
  }
  return record(out, parts,
                [axis, extents](const Tensor& g) {
                  std::vector<Tensor> grads;
                  std::int64_t start = 0;
                  for (auto e : extents) {
                    grads.push_back(slice(g, axis, start, e));
                    start += e;
                  }
                  return grads;
                },
                "concat");
}

namespace {
Tensor pad_slice_grad(const Tensor& g, const Shape& full, int axis, std::int64_t start) {
  const auto split = kernels::split_at(full, axis);
  const std::int64_t length = g.size(axis);
  Tensor out = Tensor::zeros(full);
  const float* src = g.data();
  float* o = out.data();
  for (std::int64_t a = 0; a < split.outer; ++a) {
    std::copy(src + a * length * split.inner, src + (a + 1) * length * split.inner,
              o + (a * split.extent + start) * split.inner);
  }
  return out;
}
}  // namespace

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank());
  const auto split = kernels::split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > split.extent) {
    throw std::out_of_range("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                            ") outside axis of extent " + std::to_string(split.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out = Tensor::empty(out_shape);
  const float* px = x.data();
  float* o = out.data();
  for (std::int64_t a = 0; a < split.outer; ++a) {
    const float* src = px + (a * split.extent + start) * split.inner;
    std::copy(src, src + length * split.inner, o + a * length * split.inner);
  }
  const Shape xs = x.shape();
  return record(out, {x},
                [xs, axis, start](const Tensor& g) {
                  return std::vector<Tensor>{pad_slice_grad(g, xs, axis, start)};
                },
                "slice");
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows) {
  const std::int64_t nrows = x.size(0);
  const std::int64_t width = nrows == 0 ? 0 : x.numel() / nrows;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out = Tensor::empty(out_shape);
  const float* px = x.data();
  float* o = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int64_t r = rows[i];
    if (r < 0 || r >= nrows) throw std::out_of_range("gather_rows index " + std::to_string(r));
    std::copy(px + r * width, px + (r + 1) * width, o + static_cast<std::int64_t>(i) * width);
  }
  std::vector<std::int64_t> saved(rows.begin(), rows.end());
  return record(out, {x},
                [saved = std::move(saved), nrows](const Tensor& g) {
                  return std::vector<Tensor>{scatter_rows(g, saved, nrows)};
                },
                "gather_rows");
}

Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> rows, std::int64_t num_rows) {
  if (x.size(0) != static_cast<std::int64_t>(rows.size())) {
    throw std::invalid_argument("scatter_rows: index count does not match rows");
  }
  const std::int64_t width = rows.empty() ? 0 : x.numel() / x.size(0);
  Shape out_shape = x.shape();
  out_shape[0] = num_rows;
  Tensor out = Tensor::zeros(out_shape);
  const float* px = x.data();
  float* o = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int64_t r = rows[i];
    if (r < 0 || r >= num_rows) throw std::out_of_range("scatter_rows index " + std::to_string(r));
    const float* src = px + static_cast<std::int64_t>(i) * width;
    float* dst = o + r * width;
    for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
  }
  std::vector<std::int64_t> saved(rows.begin(), rows.end());
  return record(out, {x},
                [saved = std::move(saved)](const Tensor& g) {
                  return std::vector<Tensor>{gather_rows(g, saved)};
                },
                "scatter_rows");
}

}  // namespace tessera::ops
