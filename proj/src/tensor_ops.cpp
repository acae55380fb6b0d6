#include "smoothlab/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace smoothlab {

namespace {

// Output positions o in [0, out_len) with i = o * s + off inside [0, in_len).
struct Range {
  int lo;
  int hi;
};

Range conv_range(int out_len, int in_len, int s, int off) {
  int lo = off >= 0 ? 0 : (-off + s - 1) / s;
  int hi = in_len - 1 - off < 0 ? 0 : (in_len - 1 - off) / s + 1;
  return {lo, std::min(hi, out_len)};
}

void check_conv(const Tensor& x, const std::vector<double>& weight, const std::vector<double>& bias,
                int out_channels, const char* what) {
  if (out_channels < 1 || weight.size() != static_cast<std::size_t>(out_channels) * x.c * 9) {
    throw Error(Errc::shape, std::string(what) + ": weight has " + std::to_string(weight.size()) +
                                 " values, expected " + std::to_string(out_channels * x.c * 9));
  }
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels)) {
    throw Error(Errc::shape, std::string(what) + ": bias size mismatch");
  }
}

}  // namespace

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

// cols[(ci*9 + ky*3 + kx) * P + oy*ow + ox] = x(ci, oy*s + ky*d - pad, ox*s + kx*d - pad)
void im2col(const double* x, int c, int h, int w, int oh, int ow, int s, int d, std::vector<double>& cols) {
  const int pad = d;
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  cols.assign(static_cast<std::size_t>(c) * 9 * P, 0.0);
  for (int ci = 0; ci < c; ++ci) {
    const double* in = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      const int offy = ky * d - pad;
      const Range ry = conv_range(oh, h, s, offy);
      for (int kx = 0; kx < 3; ++kx) {
        const int offx = kx * d - pad;
        const Range rx = conv_range(ow, w, s, offx);
        double* dst = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * P;
        for (int oy = ry.lo; oy < ry.hi; ++oy) {
          const double* irow = in + static_cast<std::size_t>(oy * s + offy) * w;
          double* orow = dst + static_cast<std::size_t>(oy) * ow;
          if (s == 1) {
            for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] = irow[ox + offx];
          } else {
            for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] = irow[ox * s + offx];
          }
        }
      }
    }
  }
}

// adjoint of im2col: dx(ci, ...) += cols[...]
void col2im(const std::vector<double>& cols, int c, int h, int w, int oh, int ow, int s, int d, double* x) {
  const int pad = d;
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    double* out = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      const int offy = ky * d - pad;
      const Range ry = conv_range(oh, h, s, offy);
      for (int kx = 0; kx < 3; ++kx) {
        const int offx = kx * d - pad;
        const Range rx = conv_range(ow, w, s, offx);
        const double* src = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * P;
        for (int oy = ry.lo; oy < ry.hi; ++oy) {
          double* irow = out + static_cast<std::size_t>(oy * s + offy) * w;
          const double* crow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = rx.lo; ox < rx.hi; ++ox) irow[ox * s + offx] += crow[ox];
        }
      }
    }
  }
}

// Transposed convolution geometry: input (iy, ix) and tap (ky, kx) land on
// output (2*iy + ky - 1, 2*ix + kx - 1).
void deconv_scatter(const std::vector<double>& cols, int co_n, int h, int w, double* y) {
  const int oh = 2 * h, ow = 2 * w;
  const std::size_t P = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < co_n; ++co) {
    double* out = y + static_cast<std::size_t>(co) * oh * ow;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.data() + static_cast<std::size_t>(co * 9 + ky * 3 + kx) * P;
        for (int iy = 0; iy < h; ++iy) {
          const int oy = 2 * iy + ky - 1;
          if (oy < 0 || oy >= oh) continue;
          for (int ix = 0; ix < w; ++ix) {
            const int ox = 2 * ix + kx - 1;
            if (ox < 0 || ox >= ow) continue;
            out[static_cast<std::size_t>(oy) * ow + ox] += src[static_cast<std::size_t>(iy) * w + ix];
          }
        }
      }
  }
}

void deconv_gather(const double* dy, int co_n, int h, int w, std::vector<double>& cols) {
  const int oh = 2 * h, ow = 2 * w;
  const std::size_t P = static_cast<std::size_t>(h) * w;
  cols.assign(static_cast<std::size_t>(co_n) * 9 * P, 0.0);
  for (int co = 0; co < co_n; ++co) {
    const double* g = dy + static_cast<std::size_t>(co) * oh * ow;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.data() + static_cast<std::size_t>(co * 9 + ky * 3 + kx) * P;
        for (int iy = 0; iy < h; ++iy) {
          const int oy = 2 * iy + ky - 1;
          if (oy < 0 || oy >= oh) continue;
          for (int ix = 0; ix < w; ++ix) {
            const int ox = 2 * ix + kx - 1;
            if (ox < 0 || ox >= ow) continue;
            dst[static_cast<std::size_t>(iy) * w + ix] = g[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
  }
}

void add_bias(Tensor& y, int b, const std::vector<double>& bias) {
  if (bias.empty()) return;
  for (int co = 0; co < y.c; ++co) {
    double* p = y.plane(b, co);
    for (std::size_t k = 0; k < y.plane_size(); ++k) p[k] += bias[co];
  }
}

void bias_grad(const Tensor& dy, int b, std::vector<double>* dbias) {
  if (!dbias) return;
  for (int co = 0; co < dy.c; ++co) {
    const double* g = dy.plane(b, co);
    double s = 0.0;
    for (std::size_t k = 0; k < dy.plane_size(); ++k) s += g[k];
    (*dbias)[co] += s;
  }
}

}  // namespace

Tensor conv_forward(const Tensor& x, const std::vector<double>& weight,
                    const std::vector<double>& bias, int out_channels, int stride, int dilation) {
  check_conv(x, weight, bias, out_channels, "conv_forward");
  if (stride < 1 || dilation < 1) throw Error(Errc::invalid_argument, "conv_forward: bad stride/dilation");
  const int oh = (x.h - 1) / stride + 1, ow = (x.w - 1) / stride + 1;
  const Eigen::Index K = static_cast<Eigen::Index>(x.c) * 9, P = static_cast<Eigen::Index>(oh) * ow;
  Tensor y(x.n, out_channels, oh, ow);
  std::vector<double> cols;
  const CMapMat W(weight.data(), out_channels, K);
  for (int b = 0; b < x.n; ++b) {
    im2col(x.plane(b, 0), x.c, x.h, x.w, oh, ow, stride, dilation, cols);
    MapMat Y(y.plane(b, 0), out_channels, P);
    Y.noalias() = W * CMapMat(cols.data(), K, P);
    add_bias(y, b, bias);
  }
  return y;
}

void conv_backward(const Tensor& x, const std::vector<double>& weight, int out_channels,
                   int stride, int dilation, const Tensor& dy, Tensor* dx,
                   std::vector<double>& dweight, std::vector<double>* dbias) {
  const int oh = dy.h, ow = dy.w;
  if (dy.c != out_channels || dy.n != x.n || oh != (x.h - 1) / stride + 1 || ow != (x.w - 1) / stride + 1) {
    throw Error(Errc::shape, "conv_backward: dy shape");
  }
  const Eigen::Index K = static_cast<Eigen::Index>(x.c) * 9, P = static_cast<Eigen::Index>(oh) * ow;
  if (dx) *dx = Tensor(x.n, x.c, x.h, x.w);
  dweight.resize(weight.size(), 0.0);
  if (dbias) dbias->resize(static_cast<std::size_t>(out_channels), 0.0);
  const CMapMat W(weight.data(), out_channels, K);
  MapMat dW(dweight.data(), out_channels, K);
  std::vector<double> cols, dcols(static_cast<std::size_t>(K * P));
  for (int b = 0; b < x.n; ++b) {
    const CMapMat G(dy.plane(b, 0), out_channels, P);
    bias_grad(dy, b, dbias);
    im2col(x.plane(b, 0), x.c, x.h, x.w, oh, ow, stride, dilation, cols);
    dW.noalias() += G * CMapMat(cols.data(), K, P).transpose();
    if (dx) {
      MapMat(dcols.data(), K, P).noalias() = W.transpose() * G;
      col2im(dcols, x.c, x.h, x.w, oh, ow, stride, dilation, dx->plane(b, 0));
    }
  }
}

Tensor deconv_forward(const Tensor& x, const std::vector<double>& weight,
                      const std::vector<double>& bias, int out_channels) {
  check_conv(x, weight, bias, out_channels, "deconv_forward");
  const Eigen::Index K = static_cast<Eigen::Index>(out_channels) * 9, P = static_cast<Eigen::Index>(x.h) * x.w;
  Tensor y(x.n, out_channels, 2 * x.h, 2 * x.w);
  std::vector<double> cols(static_cast<std::size_t>(K * P));
  const CMapMat Wd(weight.data(), x.c, K);
  for (int b = 0; b < x.n; ++b) {
    MapMat(cols.data(), K, P).noalias() = Wd.transpose() * CMapMat(x.plane(b, 0), x.c, P);
    deconv_scatter(cols, out_channels, x.h, x.w, y.plane(b, 0));
    add_bias(y, b, bias);
  }
  return y;
}

void deconv_backward(const Tensor& x, const std::vector<double>& weight, int out_channels,
                     const Tensor& dy, Tensor* dx, std::vector<double>& dweight,
                     std::vector<double>* dbias) {
  if (dy.c != out_channels || dy.n != x.n || dy.h != 2 * x.h || dy.w != 2 * x.w) {
    throw Error(Errc::shape, "deconv_backward: dy shape");
  }
  const Eigen::Index K = static_cast<Eigen::Index>(out_channels) * 9, P = static_cast<Eigen::Index>(x.h) * x.w;
  if (dx) *dx = Tensor(x.n, x.c, x.h, x.w);
  dweight.resize(weight.size(), 0.0);
  if (dbias) dbias->resize(static_cast<std::size_t>(out_channels), 0.0);
  const CMapMat Wd(weight.data(), x.c, K);
  MapMat dWd(dweight.data(), x.c, K);
  std::vector<double> dcols;
  for (int b = 0; b < x.n; ++b) {
    bias_grad(dy, b, dbias);
    deconv_gather(dy.plane(b, 0), out_channels, x.h, x.w, dcols);
    const CMapMat D(dcols.data(), K, P);
    dWd.noalias() += CMapMat(x.plane(b, 0), x.c, P) * D.transpose();
    if (dx) MapMat(dx->plane(b, 0), x.c, P).noalias() = Wd * D;
  }
}

Tensor norm_forward_train(const Tensor& x, const std::vector<double>& gain,
                          const std::vector<double>& shift, NormCache& cache) {
  const std::size_t hw = x.plane_size();
  const double m = static_cast<double>(hw) * x.n;
  cache.xhat = Tensor(x.n, x.c, x.h, x.w);
  cache.mean.assign(x.c, 0.0);
  cache.var.assign(x.c, 0.0);
  cache.inv_std.assign(x.c, 0.0);
  Tensor y(x.n, x.c, x.h, x.w);
  for (int ch = 0; ch < x.c; ++ch) {
    double s = 0.0;
    for (int b = 0; b < x.n; ++b) {
      const double* p = x.plane(b, ch);
      for (std::size_t k = 0; k < hw; ++k) s += p[k];
    }
    const double mean = s / m;
    double v = 0.0;
    for (int b = 0; b < x.n; ++b) {
      const double* p = x.plane(b, ch);
      for (std::size_t k = 0; k < hw; ++k) v += (p[k] - mean) * (p[k] - mean);
    }
    v /= m;
    const double inv = 1.0 / std::sqrt(std::max(v, kNormVarianceFloor));
    cache.mean[ch] = mean;
    cache.var[ch] = v;
    cache.inv_std[ch] = inv;
    for (int b = 0; b < x.n; ++b) {
      const double* p = x.plane(b, ch);
      double* xh = cache.xhat.plane(b, ch);
      double* out = y.plane(b, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        xh[k] = (p[k] - mean) * inv;
        out[k] = gain[ch] * xh[k] + shift[ch];
      }
    }
  }
  return y;
}

Tensor norm_forward_infer(const Tensor& x, const std::vector<double>& gain,
                          const std::vector<double>& shift, const std::vector<double>& mean,
                          const std::vector<double>& var) {
  Tensor y(x.n, x.c, x.h, x.w);
  for (int ch = 0; ch < x.c; ++ch) {
    const double inv = 1.0 / std::sqrt(std::max(var[ch], kNormVarianceFloor));
    for (int b = 0; b < x.n; ++b) {
      const double* p = x.plane(b, ch);
      double* out = y.plane(b, ch);
      for (std::size_t k = 0; k < x.plane_size(); ++k) out[k] = gain[ch] * ((p[k] - mean[ch]) * inv) + shift[ch];
    }
  }
  return y;
}

Tensor norm_backward(const Tensor& dy, const std::vector<double>& gain, const NormCache& cache,
                     std::vector<double>& dgain, std::vector<double>& dshift) {
  const std::size_t hw = dy.plane_size();
  const double m = static_cast<double>(hw) * dy.n;
  dgain.resize(gain.size(), 0.0);
  dshift.resize(gain.size(), 0.0);
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  for (int ch = 0; ch < dy.c; ++ch) {
    double sg = 0.0, sgx = 0.0;
    for (int b = 0; b < dy.n; ++b) {
      const double* g = dy.plane(b, ch);
      const double* xh = cache.xhat.plane(b, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        sg += g[k];
        sgx += g[k] * xh[k];
      }
    }
    dshift[ch] += sg;
    dgain[ch] += sgx;
    const double inv = cache.inv_std[ch];
    // below the floor the variance is a constant and only the mean couples
    const bool floored = cache.var[ch] < kNormVarianceFloor;
    for (int b = 0; b < dy.n; ++b) {
      const double* g = dy.plane(b, ch);
      const double* xh = cache.xhat.plane(b, ch);
      double* out = dx.plane(b, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        double v = g[k] - sg / m;
        if (!floored) v -= xh[k] * sgx / m;
        out[k] = gain[ch] * inv * v;
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t k = 0; k < dx.size(); ++k) {
    if (!(y.data[k] > 0.0)) dx.data[k] = 0.0;
  }
  return dx;
}

}  // namespace smoothlab
