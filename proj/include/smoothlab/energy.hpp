#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smoothlab/guidance.hpp"
#include "smoothlab/image.hpp"

namespace smoothlab {

/// Scalars of the smoothing objective
///   E = E_data + lambda_f * E_flatten + lambda_e * E_edge.
struct EnergyParams {
  double lambda_f = 1.0;
  double lambda_e = 0.1;
  double sigma_r = 0.1;   // colour affinity std-dev, YUV units in [0,1]
  double sigma_s = 7.0;   // spatial affinity std-dev, pixels
  double alpha = 5.0;     // multiplier on the p_large (spatial) weights
  double c1 = 20.0;       // p_large only where the input response is below c1 ...
  double c2 = 10.0;       // ... and the output response grew by more than c2
  int h = 21;             // flattening window side, odd
  double p_large = 2.0;
  double p_small = 0.8;
  double eps = 1e-4;      // smoothing of |d| in the non-smooth terms
  // c1 and c2 are expressed in 8-bit response units: responses of [0,1]
  // images are multiplied by response_scale before the comparison.
  double response_scale = 255.0;
  // Radius of the square dilation applied to the p_large set after selection.
  int large_dilation = 0;
  Neighborhood neighborhood = Neighborhood::four;

  /// Throws Errc::invalid_argument naming the offending field.
  void validate() const;

  friend bool operator==(const EnergyParams&, const EnergyParams&) = default;
};

struct Pixel {
  int y = 0;
  int x = 0;
};

/// Per-pixel choice between the p_large (spatial weight) and p_small (colour
/// weight) regularizer.
struct PMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> large;

  PMap() = default;
  PMap(int h, int w, bool all_large = false)
      : height(h), width(w), large(static_cast<std::size_t>(h) * w, all_large ? 1 : 0) {}

  bool is_large(std::size_t i) const { return large[i] != 0; }
  std::size_t count_large() const;

  static PMap all_large(int h, int w) { return PMap(h, w, true); }
  static PMap all_small(int h, int w) { return PMap(h, w, false); }
  /// Columns x < width/2 are p_large, the rest p_small.
  static PMap half_half(int h, int w);

  friend bool operator==(const PMap&, const PMap&) = default;
};

/// Fraction of pixels whose branch differs between two maps.
double flip_fraction(const PMap& a, const PMap& b);

struct EnergyBreakdown {
  double data = 0.0;
  double flatten = 0.0;
  double edge = 0.0;
  double total = 0.0;

  std::string csv_row(long iter) const;  // iter,total,data,flatten,edge
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// --- individual terms -------------------------------------------------------

/// (1/N) sum_i ||T_i - I_i||^2 with N the pixel count.
double data_term(const Image& T, const Image& I);

/// exp(-sum_c (I_i - I_j)^2 / (2 sigma_r^2)) on a YUV image.
double color_weight(const Image& yuv, Pixel i, Pixel j, double sigma_r);

/// exp(-((x_i-x_j)^2 + (y_i-y_j)^2) / (2 sigma_s^2)).
double spatial_weight(Pixel i, Pixel j, double sigma_s);

/// Branch selection from input and output responses; applies
/// params.large_dilation to the selected p_large set.
PMap select_p(const GuidanceMap& e_input, const GuidanceMap& e_output, const EnergyParams& params);

/// The epsilon-smoothed |d|^p: (d^2 + eps^2)^(p/2) - eps^p.
double smoothed_power(double d, double p, double eps);

/// Majorizer weight (p/2)(d^2 + eps^2)^((p-2)/2) of smoothed_power at d.
double irls_weight(double d, double p, double eps);

double flatten_term(const Image& T, const Image& I, const PMap& pmap, const EnergyParams& params);

/// (1/N_e) sum_i B_i (E_i(T) - E_i(I))^2 with E(I) taken from the raw input.
double edge_term(const Image& T, const Image& I, const BinaryMask& B,
                 Neighborhood nb = Neighborhood::four);
/// Same with explicit (possibly application-modified) responses.
double edge_term(const GuidanceMap& e_output, const GuidanceMap& e_input, const BinaryMask& B);

EnergyBreakdown total_energy(const Image& T, const Image& I, const BinaryMask& B,
                             const GuidanceMap& guide_I, const EnergyParams& params);

/// dE/dT with the p-map held at select_p(guide_I, E(T)).
Image energy_gradient(const Image& T, const Image& I, const BinaryMask& B,
                      const GuidanceMap& guide_I, const EnergyParams& params);

// --- cached evaluator -------------------------------------------------------

/// Offsets of the h x h window with each unordered pair listed once:
/// (dy > 0) or (dy == 0 and dx > 0).
struct PairStencil {
  struct Offset {
    int dy;
    int dx;
  };
  int height = 0;
  int width = 0;
  std::vector<Offset> offsets;

  PairStencil() = default;
  PairStencil(int height, int width, int window);

  /// Calls fn(i, j) for every pixel i whose partner j = i + offset k is inside.
  template <typename Fn>
  void for_each_pair(std::size_t k, Fn&& fn) const {
    const auto [dy, dx] = offsets[k];
    const int y_end = height - dy;
    const int x_begin = dx < 0 ? -dx : 0;
    const int x_end = dx > 0 ? width - dx : width;
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dy) * width + dx;
    for (int y = 0; y < y_end; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * width;
      for (int x = x_begin; x < x_end; ++x) {
        const std::size_t i = row + x;
        fn(i, static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + shift));
      }
    }
  }
};

/// Holds everything about an energy that depends only on the input image:
/// YUV colour weights per window offset, spatial weights, E(I), B and the
/// optional per-pixel flattening scale. Evaluations take the current output
/// and a p-map.
class EnergyModel {
 public:
  EnergyModel(Image input, BinaryMask important, GuidanceMap guide, EnergyParams params,
              std::optional<std::vector<double>> flatten_scale = std::nullopt);

  const Image& input() const { return input_; }
  const BinaryMask& important() const { return important_; }
  const GuidanceMap& guide() const { return guide_; }
  const EnergyParams& params() const { return params_; }
  const PairStencil& stencil() const { return stencil_; }

  PMap select(const Image& T) const;

  EnergyBreakdown evaluate(const Image& T, const PMap& pmap) const;
  /// Value and gradient in one sweep; `grad` is resized as needed.
  EnergyBreakdown evaluate(const Image& T, const PMap& pmap, Image& grad) const;

  /// Symmetric IRLS coefficients a_k[i] for channel c at the current output:
  /// sum over both ordered pairs of w * (p/2)(d^2+eps^2)^((p-2)/2).
  void irls_coefficients(const Image& T, int channel, const PMap& pmap,
                         std::vector<double>& coeffs) const;

  /// Flattening energy of one channel without the 1/N or lambda_f factors.
  double flatten_channel_sum(const Image& T, int channel, const PMap& pmap) const;

 private:
  double flatten_and_grad(const Image& T, const PMap& pmap, Image* grad) const;
  double edge_and_grad(const Image& T, Image* grad) const;
  double scale_at(std::size_t i) const { return flatten_scale_ ? (*flatten_scale_)[i] : 1.0; }

  Image input_;
  BinaryMask important_;
  GuidanceMap guide_;
  EnergyParams params_;
  std::optional<std::vector<double>> flatten_scale_;
  PairStencil stencil_;
  std::vector<double> spatial_;  // alpha * w^s per offset
  std::vector<double> color_;    // w^r, offsets.size() x N
};

/// Sum with a fixed pairwise tree so the result does not depend on how
/// partial sums were produced.
double pairwise_sum(std::span<const double> values);

}  // namespace smoothlab
