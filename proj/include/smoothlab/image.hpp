#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "smoothlab/error.hpp"
#include "smoothlab/rng.hpp"

namespace smoothlab {

/// Planar (channel-major) floating-point raster. Values live in [0,1] unless
/// the image is a residual or detail layer, in which case `unclamped` is set.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool unclamped() const { return unclamped_; }
  void set_unclamped(bool v) { unclamped_ = v; }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  std::span<double> plane(int c) { return {data_.data() + c * pixels(), pixels()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * pixels(), pixels()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  bool all_finite() const;

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
  bool unclamped_ = false;
};

void require_same_shape(const Image& a, const Image& b, const char* what);

// --- raster I/O -------------------------------------------------------------

/// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA; alpha dropped) or binary
/// PGM/PPM (P5/P6, maxval 255). Byte v maps to v/255.
Image load_image(const std::filesystem::path& path);

/// Writes PNG for ".png", otherwise P6 (3 channels) or P5 (1 channel).
/// Values are clamped to [0,1] and quantized with round-half-up. The file is
/// written to a temporary sibling and renamed into place.
void save_image(const Image& img, const std::filesystem::path& path);

std::vector<unsigned char> encode_pnm(const Image& img);
Image decode_pnm(std::span<const unsigned char> bytes);

unsigned char quantize(double v);

// --- colour and geometry ----------------------------------------------------

/// BT.601 full-range RGB -> YUV. U and V are stored with a +0.5 offset so the
/// whole result lies in [0,1].
Image rgb_to_yuv(const Image& rgb);
Image yuv_to_rgb(const Image& yuv);

/// Gray images are replicated to three channels; RGB is returned unchanged.
Image to_rgb(const Image& img);

Image crop(const Image& img, int x0, int y0, int size);
Image crop(const Image& img, int x0, int y0, int crop_width, int crop_height);

struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int size = 0;
};

/// Uniformly placed square window fully inside an image of the given size.
CropWindow random_crop_window(int height, int width, int size, Rng& rng);

}  // namespace smoothlab
