#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "smoothlab/image.hpp"

namespace smoothlab {

/// Per-pixel non-negative edge response E(.) of an image.
struct GuidanceMap {
  int height = 0;
  int width = 0;
  std::vector<double> response;

  GuidanceMap() = default;
  GuidanceMap(int h, int w, double fill = 0.0)
      : height(h), width(w), response(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return response[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return response[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return response.size(); }

  friend bool operator==(const GuidanceMap&, const GuidanceMap&) = default;
};

/// Per-pixel boolean map with a cached popcount.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t count() const { return count_; }
  bool empty_set() const { return count_ == 0; }

  bool test(std::size_t i) const { return bits_[i] != 0; }
  bool test(int y, int x) const { return bits_[idx(y, x)] != 0; }
  void set(std::size_t i, bool v);
  void set(int y, int x, bool v) { set(idx(y, x), v); }

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.bits_ == b.bits_;
  }

 private:
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

enum class Neighborhood { four, eight };

/// E_i = sum over neighbours j of |sum_c (I_ic - I_jc)|. Neighbours outside
/// the raster are skipped.
GuidanceMap edge_response(const Image& img, Neighborhood nb = Neighborhood::four);

struct EdgeDetectParams {
  double high = 1.0;
  double low = 0.5;
  int min_len = 8;
};

/// Hysteresis thresholding (seed at E >= high, grow through E >= low, 8-connected)
/// followed by removal of connected components with fewer than min_len pixels.
BinaryMask detect_important_edges(const GuidanceMap& guide, double high, double low, int min_len);
inline BinaryMask detect_important_edges(const GuidanceMap& guide, const EdgeDetectParams& p) {
  return detect_important_edges(guide, p.high, p.low, p.min_len);
}

struct TextureParams {
  double edge_threshold = 0.3;  // E >= this makes a pixel an edge pixel
  int window = 7;               // odd side of the density window
  double density = 0.35;        // edge fraction above which a window is "busy"
  int max_len = 12;             // components up to this many pixels count as fine-scale
};

/// Marks edge pixels that belong to fine-scale structure: the local edge
/// density exceeds `density`, or the pixel's 8-connected edge component has at
/// most `max_len` pixels. Long isolated contours stay unmarked.
BinaryMask detect_texture(const GuidanceMap& guide, const TextureParams& p);

/// Zeroes the response wherever the mask is set.
GuidanceMap mask_guidance(const GuidanceMap& guide, const BinaryMask& mask);

/// Square structuring element of side 2*radius+1.
BinaryMask dilate_mask(const BinaryMask& mask, int radius);

BinaryMask invert_mask(const BinaryMask& mask);

/// Sizes of 8-connected components; `labels` receives a component id per pixel
/// (-1 where unset).
std::vector<std::size_t> label_components(const BinaryMask& mask, std::vector<int>& labels);

GuidanceMap crop(const GuidanceMap& g, int x0, int y0, int w, int h);
BinaryMask crop(const BinaryMask& m, int x0, int y0, int w, int h);

/// 8-bit gray PNG/PGM; pixels >= 128 are set. Colour masks use their mean.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace smoothlab
