#include "smoothlab/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

namespace smoothlab {

BinaryMask::BinaryMask(int height, int width, bool fill)
    : height_(height),
      width_(width),
      bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0),
      count_(fill ? bits_.size() : 0) {}

void BinaryMask::set(std::size_t i, bool v) {
  const bool old = bits_[i] != 0;
  if (old == v) return;
  bits_[i] = v ? 1 : 0;
  if (v) {
    ++count_;
  } else {
    --count_;
  }
}

GuidanceMap edge_response(const Image& img, Neighborhood nb) {
  static constexpr int k4[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  static constexpr int k8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                   {0, 1},   {1, -1}, {1, 0},  {1, 1}};
  const int count = nb == Neighborhood::four ? 4 : 8;
  const auto* offs = nb == Neighborhood::four ? k4 : k8;

  const int h = img.height(), w = img.width();
  const int channels = img.channels();
  GuidanceMap g(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double e = 0.0;
      for (int k = 0; k < count; ++k) {
        const int yy = y + offs[k][0], xx = x + offs[k][1];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += img.at(c, y, x) - img.at(c, yy, xx);
        e += std::abs(s);
      }
      g.at(y, x) = e;
    }
  }
  return g;
}

std::vector<std::size_t> label_components(const BinaryMask& mask, std::vector<int>& labels) {
  const int h = mask.height(), w = mask.width();
  labels.assign(mask.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.test(start) || labels[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t n = 0;
    labels[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++n;
      const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
          if (mask.test(j) && labels[j] < 0) {
            labels[j] = id;
            stack.push_back(j);
          }
        }
      }
    }
    sizes.push_back(n);
  }
  return sizes;
}

BinaryMask detect_important_edges(const GuidanceMap& guide, double high, double low,
                                  int min_len) {
  if (!(high >= low) || low < 0.0) {
    throw Error(Errc::invalid_argument, "detect_important_edges: require high >= low >= 0");
  }
  const int h = guide.height, w = guide.width;
  BinaryMask out(h, w);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < guide.size(); ++i) {
    if (guide.response[i] >= high && guide.response[i] >= low) {
      out.set(i, true);
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (!out.test(j) && guide.response[j] >= low) {
          out.set(j, true);
          queue.push_back(j);
        }
      }
    }
  }
  std::vector<int> labels;
  const auto sizes = label_components(out, labels);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (labels[i] >= 0 && sizes[static_cast<std::size_t>(labels[i])] < static_cast<std::size_t>(min_len)) {
      out.set(i, false);
    }
  }
  return out;
}

BinaryMask detect_texture(const GuidanceMap& guide, const TextureParams& p) {
  if (p.window < 1 || p.window % 2 == 0) {
    throw Error(Errc::invalid_argument, "detect_texture: window must be odd and positive");
  }
  const int h = guide.height, w = guide.width;
  BinaryMask edges(h, w);
  for (std::size_t i = 0; i < guide.size(); ++i) {
    if (guide.response[i] >= p.edge_threshold && guide.response[i] > 0.0) edges.set(i, true);
  }

  // Summed-area table of edge pixels for the window density.
  std::vector<long> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  auto s = [&](int y, int x) -> long& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      s(y + 1, x + 1) = s(y, x + 1) + s(y + 1, x) - s(y, x) + (edges.test(y, x) ? 1 : 0);
    }
  }

  std::vector<int> labels;
  const auto sizes = label_components(edges, labels);
  const int r = p.window / 2;
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!edges.test(y, x)) continue;
      const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const long n = s(y1, x1) - s(y0, x1) - s(y1, x0) + s(y0, x0);
      const double density = static_cast<double>(n) / ((y1 - y0) * (x1 - x0));
      const std::size_t comp = sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(y) * w + x])];
      if (density > p.density || comp <= static_cast<std::size_t>(p.max_len)) out.set(y, x, true);
    }
  }
  return out;
}

GuidanceMap mask_guidance(const GuidanceMap& guide, const BinaryMask& mask) {
  if (guide.height != mask.height() || guide.width != mask.width()) {
    throw Error(Errc::shape, "mask_guidance: mask is " + std::to_string(mask.width()) + "x" +
                                 std::to_string(mask.height()) + ", guidance is " +
                                 std::to_string(guide.width) + "x" + std::to_string(guide.height));
  }
  GuidanceMap out = guide;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.test(i)) out.response[i] = 0.0;
  }
  return out;
}

BinaryMask dilate_mask(const BinaryMask& mask, int radius) {
  if (radius < 0) throw Error(Errc::invalid_argument, "dilate_mask: radius must be >= 0");
  if (radius == 0) return mask;
  const int h = mask.height(), w = mask.width();
  std::vector<std::uint8_t> rows(mask.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.test(y, x)) continue;
      for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) {
        rows[static_cast<std::size_t>(y) * w + xx] = 1;
      }
    }
  }
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!rows[static_cast<std::size_t>(y) * w + x]) continue;
      for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
        out.set(yy, x, true);
      }
    }
  }
  return out;
}

BinaryMask invert_mask(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) out.set(i, !mask.test(i));
  return out;
}

GuidanceMap crop(const GuidanceMap& g, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > g.width || y0 + h > g.height) {
    throw Error(Errc::invalid_argument, "crop: rectangle outside guidance map");
  }
  GuidanceMap out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(y, x) = g.at(y0 + y, x0 + x);
  }
  return out;
}

BinaryMask crop(const BinaryMask& m, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > m.width() || y0 + h > m.height()) {
    throw Error(Errc::invalid_argument, "crop: rectangle outside mask");
  }
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.set(y, x, m.test(y0 + y, x0 + x));
  }
  return out;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  const Image img = load_image(path);
  BinaryMask out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double v = 0.0;
      for (int c = 0; c < img.channels(); ++c) v += img.at(c, y, x);
      v /= img.channels();
      out.set(y, x, v >= 128.0 / 255.0);
    }
  }
  return out;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  Image img(mask.height(), mask.width(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) img.data()[i] = mask.test(i) ? 1.0 : 0.0;
  save_image(img, path);
}

}  // namespace smoothlab
