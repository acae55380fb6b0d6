#pragma once

#include <vector>

#include "smoothlab/guidance.hpp"
#include "smoothlab/image.hpp"
#include "smoothlab/rng.hpp"

namespace smoothlab::synth {

/// Left half `left`, right half `right` (per-channel colours), optional
/// additive Gaussian noise, not clamped so the noise stays zero-mean.
Image step_edge(int height, int width, const double (&left)[3], const double (&right)[3],
                double noise_sigma, Rng& rng);

/// Both columns adjacent to the vertical step of step_edge.
BinaryMask step_edge_mask(int height, int width);

void add_noise(Image& img, double sigma, Rng& rng);

/// A few flat-coloured rectangles and discs over a random background.
Image shapes(int size, Rng& rng, double noise_sigma);

/// Smooth two-axis colour gradient with mild noise.
Image ramp(int size, Rng& rng, double noise_sigma);

/// Shapes overlaid with a fine stripe or checker texture of small amplitude.
Image textured(int size, Rng& rng);

/// Deterministic mixed corpus: cycles through shapes, ramp, textured and
/// noisy step images. Values are quantized to the 8-bit grid.
std::vector<Image> corpus(int count, int size, std::uint64_t seed);

Image quantize_8bit(Image img);

}  // namespace smoothlab::synth
