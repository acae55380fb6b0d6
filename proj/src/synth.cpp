#include "smoothlab/synth.hpp"

#include <algorithm>
#include <cmath>

namespace smoothlab::synth {

void add_noise(Image& img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (auto& v : img.data()) v += sigma * rng.normal();
}

Image step_edge(int height, int width, const double (&left)[3], const double (&right)[3],
                double noise_sigma, Rng& rng) {
  Image img(height, width, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) img.at(c, y, x) = x < width / 2 ? left[c] : right[c];
  add_noise(img, noise_sigma, rng);
  return img;
}

BinaryMask step_edge_mask(int height, int width) {
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y) {
    m.set(y, width / 2 - 1, true);
    m.set(y, width / 2, true);
  }
  return m;
}

namespace {

void random_colour(Rng& rng, double (&c)[3]) {
  for (auto& v : c) v = rng.uniform(0.05, 0.95);
}

void fill_rect(Image& img, int y0, int x0, int y1, int x1, const double (&c)[3]) {
  for (int ch = 0; ch < 3; ++ch)
    for (int y = std::max(0, y0); y < std::min(img.height(), y1); ++y)
      for (int x = std::max(0, x0); x < std::min(img.width(), x1); ++x) img.at(ch, y, x) = c[ch];
}

void fill_disc(Image& img, double cy, double cx, double r, const double (&c)[3]) {
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) img.at(ch, y, x) = c[ch];
      }
}

void clamp01(Image& img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

Image shapes(int size, Rng& rng, double noise_sigma) {
  Image img(size, size, 3);
  double bg[3];
  random_colour(rng, bg);
  fill_rect(img, 0, 0, size, size, bg);
  const int count = 2 + static_cast<int>(rng.below(3));
  for (int k = 0; k < count; ++k) {
    double col[3];
    random_colour(rng, col);
    if (rng.below(2)) {
      const int y0 = static_cast<int>(rng.below(size * 3 / 4));
      const int x0 = static_cast<int>(rng.below(size * 3 / 4));
      const int hh = size / 6 + static_cast<int>(rng.below(size / 2));
      const int ww = size / 6 + static_cast<int>(rng.below(size / 2));
      fill_rect(img, y0, x0, y0 + hh, x0 + ww, col);
    } else {
      fill_disc(img, rng.uniform(0, size), rng.uniform(0, size), rng.uniform(size / 8.0, size / 3.0), col);
    }
  }
  add_noise(img, noise_sigma, rng);
  clamp01(img);
  return img;
}

Image ramp(int size, Rng& rng, double noise_sigma) {
  Image img(size, size, 3);
  double a[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    a[c] = rng.uniform(0.2, 0.8);
    gy[c] = rng.uniform(-0.3, 0.3);
    gx[c] = rng.uniform(-0.3, 0.3);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = static_cast<double>(y) / size - 0.5, v = static_cast<double>(x) / size - 0.5;
        img.at(c, y, x) = a[c] + gy[c] * u + gx[c] * v;
      }
  add_noise(img, noise_sigma, rng);
  clamp01(img);
  return img;
}

Image textured(int size, Rng& rng) {
  Image img = shapes(size, rng, 0.0);
  const int period = 2 + static_cast<int>(rng.below(3));
  const double amp = rng.uniform(0.05, 0.12);
  const bool checker = rng.below(2) == 1;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int phase = checker ? (y / period + x / period) : (x + y) / period;
        img.at(c, y, x) += (phase % 2 ? amp : -amp);
      }
  add_noise(img, 0.01, rng);
  clamp01(img);
  return img;
}

Image quantize_8bit(Image img) {
  for (auto& v : img.data()) v = quantize(v) / 255.0;
  return img;
}

std::vector<Image> corpus(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Image img;
    switch (k % 4) {
      case 0: img = shapes(size, rng, rng.uniform(0.02, 0.06)); break;
      case 1: img = ramp(size, rng, rng.uniform(0.005, 0.02)); break;
      case 2: img = textured(size, rng); break;
      default: {
        double l[3], r[3];
        for (int c = 0; c < 3; ++c) {
          l[c] = rng.uniform(0.1, 0.4);
          r[c] = rng.uniform(0.6, 0.9);
        }
        img = step_edge(size, size, l, r, 0.04, rng);
        for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back(quantize_8bit(std::move(img)));
  }
  return out;
}

}  // namespace smoothlab::synth
