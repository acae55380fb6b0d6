#include "smoothlab/image.hpp"

#include <array>
#include <cmath>
#include <string>

namespace smoothlab {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::unsupported: return "unsupported";
    case Errc::version: return "version";
    case Errc::shape: return "shape";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::solver: return "solver";
    case Errc::numeric: return "numeric";
    case Errc::state: return "state";
  }
  return "unknown";
}

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw Error(Errc::invalid_argument, "image dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error(Errc::shape, "image data length does not match height*width*channels");
  }
}

bool Image::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::shape,
                std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                    std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                    std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                    std::to_string(b.channels()) + ")");
  }
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr Mat3 kRgbToYuv = {{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};

Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

const Mat3& yuv_to_rgb_matrix() {
  static const Mat3 inv = invert(kRgbToYuv);
  return inv;
}

Image apply3(const Image& in, const Mat3& m, const std::array<double, 3>& pre,
             const std::array<double, 3>& post, const char* what) {
  if (in.channels() != 3) {
    throw Error(Errc::shape, std::string(what) + ": expected 3 channels, got " +
                                 std::to_string(in.channels()));
  }
  Image out(in.height(), in.width(), 3);
  const auto a = in.plane(0), b = in.plane(1), c = in.plane(2);
  for (int k = 0; k < 3; ++k) {
    auto dst = out.plane(k);
    for (std::size_t i = 0; i < in.pixels(); ++i) {
      dst[i] = m[k][0] * (a[i] + pre[0]) + m[k][1] * (b[i] + pre[1]) +
               m[k][2] * (c[i] + pre[2]) + post[k];
    }
  }
  return out;
}

}  // namespace

Image rgb_to_yuv(const Image& rgb) {
  return apply3(rgb, kRgbToYuv, {0.0, 0.0, 0.0}, {0.0, 0.5, 0.5}, "rgb_to_yuv");
}

Image yuv_to_rgb(const Image& yuv) {
  return apply3(yuv, yuv_to_rgb_matrix(), {0.0, -0.5, -0.5}, {0.0, 0.0, 0.0}, "yuv_to_rgb");
}

Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  if (img.channels() != 1) {
    throw Error(Errc::shape, "to_rgb: expected 1 or 3 channels");
  }
  Image out(img.height(), img.width(), 3);
  for (int c = 0; c < 3; ++c) {
    auto dst = out.plane(c);
    auto src = img.plane(0);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

Image crop(const Image& img, int x0, int y0, int crop_width, int crop_height) {
  if (x0 < 0 || y0 < 0 || crop_width <= 0 || crop_height <= 0 ||
      x0 + crop_width > img.width() || y0 + crop_height > img.height()) {
    throw Error(Errc::invalid_argument,
                "crop: rectangle (" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                    std::to_string(crop_width) + "x" + std::to_string(crop_height) +
                    ") outside " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + " image");
  }
  Image out(crop_height, crop_width, img.channels());
  out.set_unclamped(img.unclamped());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < crop_height; ++y) {
      for (int x = 0; x < crop_width; ++x) {
        out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
      }
    }
  }
  return out;
}

Image crop(const Image& img, int x0, int y0, int size) { return crop(img, x0, y0, size, size); }

CropWindow random_crop_window(int height, int width, int size, Rng& rng) {
  if (size <= 0 || size > height || size > width) {
    throw Error(Errc::invalid_argument, "random_crop_window: crop " + std::to_string(size) +
                                            " does not fit " + std::to_string(width) + "x" +
                                            std::to_string(height));
  }
  CropWindow w;
  w.size = size;
  w.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - size) + 1));
  w.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - size) + 1));
  return w;
}

}  // namespace smoothlab
