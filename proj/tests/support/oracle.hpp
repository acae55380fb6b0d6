#pragma once
// Brute-force reference implementations used only by tests. Everything here
// is written directly from the formulas with plain nested loops and shares no
// code with the library's cached evaluators.

#include <cmath>
#include <optional>
#include <vector>

#include "smoothlab/energy.hpp"
#include "smoothlab/image.hpp"
#include "smoothlab/rng.hpp"

namespace oracle {

using smoothlab::BinaryMask;
using smoothlab::EnergyBreakdown;
using smoothlab::EnergyParams;
using smoothlab::GuidanceMap;
using smoothlab::Image;
using smoothlab::PMap;

inline Image random_image(int h, int w, int c, smoothlab::Rng& rng, double lo = 0.0,
                          double hi = 1.0) {
  Image img(h, w, c);
  for (auto& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

inline BinaryMask random_mask(int h, int w, double density, smoothlab::Rng& rng) {
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < density);
  return m;
}

inline std::vector<double> edge_response(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<double> e(static_cast<std::size_t>(h) * w, 0.0);
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        double s = 0.0;
        for (int c = 0; c < img.channels(); ++c) s += img.at(c, y, x) - img.at(c, yy, xx);
        acc += std::abs(s);
      }
      e[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return e;
}

inline void yuv(const Image& I, int y, int x, double out[3]) {
  if (I.channels() == 1) {
    out[0] = I.at(0, y, x);
    return;
  }
  const double r = I.at(0, y, x), g = I.at(1, y, x), b = I.at(2, y, x);
  out[0] = 0.299 * r + 0.587 * g + 0.114 * b;
  out[1] = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5;
  out[2] = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5;
}

inline PMap select(const std::vector<double>& eI, const std::vector<double>& eT, int h, int w,
                   const EnergyParams& p) {
  PMap m(h, w);
  for (std::size_t i = 0; i < eI.size(); ++i) {
    const bool large = p.response_scale * eI[i] < p.c1 &&
                       p.response_scale * eT[i] - p.response_scale * eI[i] > p.c2;
    m.large[i] = large ? 1 : 0;
  }
  return m;
}

/// Total energy evaluated with ordered-pair quadruple loops. When `frozen` is given
/// it replaces the p-map selection.
inline EnergyBreakdown energy(const Image& T, const Image& I, const BinaryMask& B,
                              const GuidanceMap& guide, const EnergyParams& p,
                              const std::optional<PMap>& frozen = std::nullopt) {
  const int h = I.height(), w = I.width(), C = I.channels();
  const double N = static_cast<double>(h) * w;
  EnergyBreakdown e;

  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = T.at(c, y, x) - I.at(c, y, x);
        e.data += d * d;
      }
  e.data /= N;

  const auto eT = oracle::edge_response(T);
  const PMap pm = frozen ? *frozen : select(guide.response, eT, h, w, p);
  const int r = p.h / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool large = pm.large[static_cast<std::size_t>(y) * w + x] != 0;
      const double pi = large ? p.p_large : p.p_small;
      double ci[3];
      yuv(I, y, x, ci);
      for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx) {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w || (yy == y && xx == x)) continue;
          double wgt;
          if (large) {
            const double dist2 = double(yy - y) * (yy - y) + double(xx - x) * (xx - x);
            wgt = p.alpha * std::exp(-dist2 / (2 * p.sigma_s * p.sigma_s));
          } else {
            double cj[3];
            yuv(I, yy, xx, cj);
            double dist2 = 0.0;
            for (int k = 0; k < (C == 3 ? 3 : 1); ++k) dist2 += (ci[k] - cj[k]) * (ci[k] - cj[k]);
            wgt = std::exp(-dist2 / (2 * p.sigma_r * p.sigma_r));
          }
          for (int c = 0; c < C; ++c) {
            const double d = T.at(c, y, x) - T.at(c, yy, xx);
            e.flatten += wgt * (std::pow(d * d + p.eps * p.eps, pi / 2) - std::pow(p.eps, pi));
          }
        }
    }
  e.flatten /= N;

  double ne = 0.0;
  for (std::size_t i = 0; i < B.size(); ++i) {
    if (!B.test(i)) continue;
    ne += 1.0;
    e.edge += (eT[i] - guide.response[i]) * (eT[i] - guide.response[i]);
  }
  e.edge = ne > 0 ? e.edge / ne : 0.0;
  e.total = e.data + p.lambda_f * e.flatten + p.lambda_e * e.edge;
  return e;
}

inline double rel_err(double a, double b, double floor = 1e-300) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

}  // namespace oracle
