#pragma once

#include <cstddef>
#include <vector>

#include "smoothlab/error.hpp"

namespace smoothlab {

/// Dense (n, c, h, w) tensor, row-major with w fastest.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  double* plane(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane_size(); }
  const double* plane(int b, int ch) const {
    return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane_size();
  }
  double& at(int b, int ch, int y, int x) { return plane(b, ch)[static_cast<std::size_t>(y) * w + x]; }
  double at(int b, int ch, int y, int x) const { return plane(b, ch)[static_cast<std::size_t>(y) * w + x]; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// --- layer primitives -------------------------------------------------------
// Kernels are 3x3. Convolution weights are laid out (out, in, 3, 3); the
// transposed convolution uses (in, out, 3, 3). An empty bias means none.

/// Zero-padded cross-correlation with padding = dilation, so stride 1 keeps
/// the spatial size and stride 2 halves it.
Tensor conv_forward(const Tensor& x, const std::vector<double>& weight,
                    const std::vector<double>& bias, int out_channels, int stride, int dilation);

/// Accumulates into dweight/dbias; dx is overwritten when non-null.
void conv_backward(const Tensor& x, const std::vector<double>& weight, int out_channels,
                   int stride, int dilation, const Tensor& dy, Tensor* dx,
                   std::vector<double>& dweight, std::vector<double>* dbias);

/// Transposed convolution, stride 2, padding 1, output padding 1: doubles
/// the spatial size.
Tensor deconv_forward(const Tensor& x, const std::vector<double>& weight,
                      const std::vector<double>& bias, int out_channels);
void deconv_backward(const Tensor& x, const std::vector<double>& weight, int out_channels,
                     const Tensor& dy, Tensor* dx, std::vector<double>& dweight,
                     std::vector<double>* dbias);

inline constexpr double kNormVarianceFloor = 1e-5;

struct NormCache {
  Tensor xhat;
  std::vector<double> mean;
  std::vector<double> var;       // batch variance before flooring
  std::vector<double> inv_std;
};

/// Per-channel normalization over (n, h, w) with the variance floored at
/// kNormVarianceFloor, then gain/shift.
Tensor norm_forward_train(const Tensor& x, const std::vector<double>& gain,
                          const std::vector<double>& shift, NormCache& cache);
/// Same with fixed statistics.
Tensor norm_forward_infer(const Tensor& x, const std::vector<double>& gain,
                          const std::vector<double>& shift, const std::vector<double>& mean,
                          const std::vector<double>& var);
Tensor norm_backward(const Tensor& dy, const std::vector<double>& gain, const NormCache& cache,
                     std::vector<double>& dgain, std::vector<double>& dshift);

Tensor relu_forward(const Tensor& x);
/// Passes dy where the forward output was > 0.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

}  // namespace smoothlab
