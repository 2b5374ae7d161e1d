#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kernels.hpp"
#include "tessera/ops.hpp"

namespace tessera::ops {

Tensor softmax_lastdim(const Tensor& x) {
  const std::int64_t width = x.size(-1);
  const std::int64_t rows = width == 0 ? 0 : x.numel() / width;
  Tensor out = Tensor::empty(x.shape());
  const float* px = x.data();
  float* o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * width;
    float* y = o + r * width;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < width; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (std::int64_t j = 0; j < width; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    const auto inv = static_cast<float>(1.0 / total);
    for (std::int64_t j = 0; j < width; ++j) y[j] *= inv;
  }
  Tensor od = out.detach();
  return record(out, {x},
                [od, rows, width](const Tensor& g) {
                  Tensor dx = Tensor::empty(od.shape());
                  const float* y = od.data();
                  const float* pg = g.data();
                  float* d = dx.data();
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t base = r * width;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < width; ++j) dot += pg[base + j] * y[base + j];
                    for (std::int64_t j = 0; j < width; ++j) {
                      d[base + j] = y[base + j] * (pg[base + j] - static_cast<float>(dot));
                    }
                  }
                  return std::vector<Tensor>{dx};
                },
                "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::int64_t width = x.size(-1);
  const std::int64_t rows = x.numel() / width;
  Tensor out = Tensor::empty(x.shape());
  Tensor xhat = Tensor::empty(x.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(rows));
  {
    const float* px = x.data();
    const float* pg = gain.defined() ? gain.data() : nullptr;
    const float* pb = bias.defined() ? bias.data() : nullptr;
    float* o = out.data();
    float* h = xhat.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* in = px + r * width;
      double s = 0.0;
      for (std::int64_t j = 0; j < width; ++j) s += in[j];
      const double mu = s / static_cast<double>(width);
      double v = 0.0;
      for (std::int64_t j = 0; j < width; ++j) v += (in[j] - mu) * (in[j] - mu);
      const auto is = static_cast<float>(1.0 / std::sqrt(v / static_cast<double>(width) + eps));
      inv_std[static_cast<std::size_t>(r)] = is;
      for (std::int64_t j = 0; j < width; ++j) {
        const float xh = static_cast<float>(in[j] - mu) * is;
        h[r * width + j] = xh;
        o[r * width + j] = xh * (pg ? pg[j] : 1.f) + (pb ? pb[j] : 0.f);
      }
    }
  }
  // The normalized copy is a saved activation; it is not a graph-visible
  // tensor, so drop it when nothing will run backward.
  if (!grad_enabled()) xhat = Tensor();
  Tensor gd = gain.defined() ? gain.detach() : Tensor();
  const bool gx = x.requires_grad();
  const bool gg = gain.defined() && gain.requires_grad();
  const bool gb = bias.defined() && bias.requires_grad();
  return record(out, {x, gain, bias},
                [=](const Tensor& g) {
                  Tensor dx, dg, db;
                  const float* pg = g.data();
                  const float* h = xhat.data();
                  if (gx) {
                    dx = Tensor::empty(xhat.shape());
                    float* d = dx.data();
                    const float* gain_p = gd.defined() ? gd.data() : nullptr;
                    std::vector<float> u(static_cast<std::size_t>(width));
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const std::int64_t base = r * width;
                      double mu_u = 0.0, mu_uh = 0.0;
                      for (std::int64_t j = 0; j < width; ++j) {
                        const float uj = pg[base + j] * (gain_p ? gain_p[j] : 1.f);
                        u[static_cast<std::size_t>(j)] = uj;
                        mu_u += uj;
                        mu_uh += uj * h[base + j];
                      }
                      mu_u /= static_cast<double>(width);
                      mu_uh /= static_cast<double>(width);
                      const float is = inv_std[static_cast<std::size_t>(r)];
                      for (std::int64_t j = 0; j < width; ++j) {
                        d[base + j] = is * static_cast<float>(u[static_cast<std::size_t>(j)] - mu_u -
                                                              h[base + j] * mu_uh);
                      }
                    }
                  }
                  if (gg || gb) {
                    std::vector<double> ag(static_cast<std::size_t>(width), 0.0);
                    std::vector<double> ab(static_cast<std::size_t>(width), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t j = 0; j < width; ++j) {
                        ag[static_cast<std::size_t>(j)] += pg[r * width + j] * h[r * width + j];
                        ab[static_cast<std::size_t>(j)] += pg[r * width + j];
                      }
                    }
                    if (gg) {
                      dg = Tensor::empty({width});
                      std::transform(ag.begin(), ag.end(), dg.data(), [](double v) { return static_cast<float>(v); });
                    }
                    if (gb) {
                      db = Tensor::empty({width});
                      std::transform(ab.begin(), ab.end(), db.data(), [](double v) { return static_cast<float>(v); });
                    }
                  }
                  return std::vector<Tensor>{dx, dg, db};
                },
                "layer_norm");
}

namespace {

// y = gain * x / sqrt(mean(x^2) + eps) along the last axis when mean_square,
// otherwise y = x / sqrt(sum(x^2) + eps).
Tensor scale_normalize(const Tensor& x, const Tensor& gain, float eps, bool mean_square,
                       const char* name) {
  const std::int64_t width = x.size(-1);
  const std::int64_t rows = width == 0 ? 0 : x.numel() / width;
  const double denom = mean_square ? static_cast<double>(width) : 1.0;
  Tensor out = Tensor::empty(x.shape());
  std::vector<float> inv(static_cast<std::size_t>(rows));
  const float* px = x.data();
  const float* pgain = gain.defined() ? gain.data() : nullptr;
  float* o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = px + r * width;
    double ss = 0.0;
    for (std::int64_t j = 0; j < width; ++j) ss += static_cast<double>(in[j]) * in[j];
    const auto iv = static_cast<float>(1.0 / std::sqrt(ss / denom + eps));
    inv[static_cast<std::size_t>(r)] = iv;
    for (std::int64_t j = 0; j < width; ++j) o[r * width + j] = in[j] * iv * (pgain ? pgain[j] : 1.f);
  }
  Tensor xd = x.detach();
  Tensor gd = gain.defined() ? gain.detach() : Tensor();
  const bool gx = x.requires_grad();
  const bool gg = gain.defined() && gain.requires_grad();
  return record(out, {x, gain},
                [=](const Tensor& g) {
                  Tensor dx, dg;
                  const float* pg = g.data();
                  const float* xv = xd.data();
                  const float* gain_p = gd.defined() ? gd.data() : nullptr;
                  if (gx) {
                    dx = Tensor::empty(xd.shape());
                    float* d = dx.data();
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const std::int64_t base = r * width;
                      const float iv = inv[static_cast<std::size_t>(r)];
                      double dot = 0.0;
                      for (std::int64_t j = 0; j < width; ++j) {
                        dot += static_cast<double>(pg[base + j]) * (gain_p ? gain_p[j] : 1.f) * xv[base + j];
                      }
                      const auto coef = static_cast<float>(dot * iv * iv * iv / denom);
                      for (std::int64_t j = 0; j < width; ++j) {
                        d[base + j] = pg[base + j] * (gain_p ? gain_p[j] : 1.f) * iv - xv[base + j] * coef;
                      }
                    }
                  }
                  if (gg) {
                    std::vector<double> acc(static_cast<std::size_t>(width), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const float iv = inv[static_cast<std::size_t>(r)];
                      for (std::int64_t j = 0; j < width; ++j) {
                        acc[static_cast<std::size_t>(j)] += pg[r * width + j] * xv[r * width + j] * iv;
                      }
                    }
                    dg = Tensor::empty({width});
                    std::transform(acc.begin(), acc.end(), dg.data(), [](double v) { return static_cast<float>(v); });
                  }
                  return std::vector<Tensor>{dx, dg};
                },
                name);
}

}  // namespace

Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
  return scale_normalize(x, gain, eps, true, "rms_norm");
}

Tensor l2_normalize(const Tensor& x, float eps) {
  return scale_normalize(x, Tensor(), eps, false, "l2_normalize");
}

namespace {

void check_nhwc(const Tensor& x, const char* what) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(what) + " expects [B, H, W, C], got " + to_string(x.shape()));
  }
}

// to_depth: x[B,H,W,C] -> [B,H/f,W/f,f*f*C]; otherwise the inverse.
Tensor shuffle(const Tensor& x, int f, bool to_depth) {
  const std::int64_t b = x.size(0);
  std::int64_t h, w, c;
  if (to_depth) {
    h = x.size(1);
    w = x.size(2);
    c = x.size(3);
    if (h % f || w % f) {
      throw std::invalid_argument("space_to_depth: " + to_string(x.shape()) + " not divisible by " +
                                  std::to_string(f));
    }
  } else {
    if (x.size(3) % (f * f)) {
      throw std::invalid_argument("depth_to_space: channels of " + to_string(x.shape()) +
                                  " not divisible by " + std::to_string(f * f));
    }
    h = x.size(1) * f;
    w = x.size(2) * f;
    c = x.size(3) / (f * f);
  }
  const std::int64_t ho = h / f, wo = w / f;
  Tensor out = Tensor::empty(to_depth ? Shape{b, ho, wo, f * f * c} : Shape{b, h, w, c});
  const float* src = x.data();
  float* dst = out.data();
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t i = 0; i < ho; ++i) {
      for (std::int64_t j = 0; j < wo; ++j) {
        for (std::int64_t dy = 0; dy < f; ++dy) {
          for (std::int64_t dx = 0; dx < f; ++dx) {
            const std::int64_t spatial = ((n * h + i * f + dy) * w + j * f + dx) * c;
            const std::int64_t depth = ((n * ho + i) * wo + j) * f * f * c + (dy * f + dx) * c;
            if (to_depth) std::copy(src + spatial, src + spatial + c, dst + depth);
            else std::copy(src + depth, src + depth + c, dst + spatial);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor space_to_depth(const Tensor& x, int factor) {
  check_nhwc(x, "space_to_depth");
  return record(shuffle(x, factor, true), {x},
                [factor](const Tensor& g) { return std::vector<Tensor>{depth_to_space(g, factor)}; },
                "space_to_depth");
}

Tensor depth_to_space(const Tensor& x, int factor) {
  check_nhwc(x, "depth_to_space");
  return record(shuffle(x, factor, false), {x},
                [factor](const Tensor& g) { return std::vector<Tensor>{space_to_depth(g, factor)}; },
                "depth_to_space");
}

namespace {

struct ConvGeometry {
  std::int64_t b, h, w, cin, kh, kw, cout, ho, wo;
  int stride, pad;
};

// cols[ho*wo, kh*kw*cin] for one image.
void im2col(const float* img, const ConvGeometry& g, float* cols) {
  const std::int64_t krow = g.kh * g.kw * g.cin;
  for (std::int64_t oy = 0; oy < g.ho; ++oy) {
    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
      float* row = cols + (oy * g.wo + ox) * krow;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const std::int64_t iy = oy * g.stride - g.pad + ky;
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const std::int64_t ix = ox * g.stride - g.pad + kx;
          float* dst = row + (ky * g.kw + kx) * g.cin;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.cin, 0.0f);
          } else {
            const float* src = img + (iy * g.w + ix) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* img) {
  const std::int64_t krow = g.kh * g.kw * g.cin;
  for (std::int64_t oy = 0; oy < g.ho; ++oy) {
    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
      const float* row = cols + (oy * g.wo + ox) * krow;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const std::int64_t iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const std::int64_t ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.w) continue;
          const float* src = row + (ky * g.kw + kx) * g.cin;
          float* dst = img + (iy * g.w + ix) * g.cin;
          for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  check_nhwc(x, "conv2d");
  if (weight.rank() != 4 || weight.size(2) != x.size(3)) {
    throw std::invalid_argument("conv2d: weight " + to_string(weight.shape()) + " does not match input " +
                                to_string(x.shape()));
  }
  ConvGeometry g{x.size(0), x.size(1), x.size(2), x.size(3), weight.size(0), weight.size(1), weight.size(3),
                 0, 0, stride, padding};
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw std::invalid_argument("conv2d: empty output for " + to_string(x.shape()));
  const std::int64_t krow = g.kh * g.kw * g.cin;
  const std::int64_t npix = g.ho * g.wo;
  Tensor out = Tensor::empty({g.b, g.ho, g.wo, g.cout});
  std::vector<float> cols(static_cast<std::size_t>(npix * krow));
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
  for (std::int64_t n = 0; n < g.b; ++n) {
    float* o = out.data() + n * npix * g.cout;
    if (bias.defined()) {
      for (std::int64_t p = 0; p < npix; ++p) std::copy(bias.data(), bias.data() + g.cout, o + p * g.cout);
    }
    const float* img = x.data() + n * g.h * g.w * g.cin;
    const float* a = img;
    if (!pointwise) {
      im2col(img, g, cols.data());
      a = cols.data();
    }
    kernels::gemm(false, false, npix, g.cout, krow, a, weight.data(), o, bias.defined());
  }
  Tensor xd = x.detach(), wd = weight.detach();
  const bool gx = x.requires_grad(), gw = weight.requires_grad();
  const bool gb = bias.defined() && bias.requires_grad();
  return record(out, {x, weight, bias},
                [=](const Tensor& grad) {
                  Tensor dx, dw, db;
                  if (gx) dx = Tensor::zeros(xd.shape());
                  if (gw) dw = Tensor::zeros(wd.shape());
                  std::vector<float> buf(pointwise ? 0 : static_cast<std::size_t>(npix * krow));
                  for (std::int64_t n = 0; n < g.b; ++n) {
                    const float* gn = grad.data() + n * npix * g.cout;
                    if (gw) {
                      const float* img = xd.data() + n * g.h * g.w * g.cin;
                      const float* a = img;
                      if (!pointwise) {
                        im2col(img, g, buf.data());
                        a = buf.data();
                      }
                      kernels::gemm(true, false, krow, g.cout, npix, a, gn, dw.data(), true);
                    }
                    if (gx) {
                      float* dimg = dx.data() + n * g.h * g.w * g.cin;
                      if (pointwise) {
                        kernels::gemm(false, true, npix, krow, g.cout, gn, wd.data(), dimg, false);
                      } else {
                        kernels::gemm(false, true, npix, krow, g.cout, gn, wd.data(), buf.data(), false);
                        col2im_add(buf.data(), g, dimg);
                      }
                    }
                  }
                  if (gb) db = sum_to(grad.reshape({g.b * npix, g.cout}), {g.cout});
                  return std::vector<Tensor>{dx, dw, db};
                },
                "conv2d");
}

}  // namespace tessera::ops
