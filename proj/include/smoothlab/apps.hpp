#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smoothlab/energy.hpp"
#include "smoothlab/guidance.hpp"

namespace smoothlab {

enum class PresetId { flatten, abstract, detail, texture, content_bg, content_fg };

/// Stable lowercase ids: flatten, abstract, detail, texture, content_bg, content_fg.
const char* preset_name(PresetId id);
PresetId parse_preset(const std::string& name);  // case-insensitive
const std::vector<PresetId>& all_presets();

enum class GuidanceStep {
  zero_texture,     // zero the response at detect_texture pixels
  zero_background,  // zero the response outside the saliency mask
  zero_foreground   // zero the response inside the saliency mask
};

const char* guidance_step_name(GuidanceStep step);

struct Preset {
  PresetId id = PresetId::flatten;
  EnergyParams params;
  std::vector<GuidanceStep> steps;
  EdgeDetectParams edges;
  TextureParams texture;
  // Content presets: flattening weight multiplier on the preserved region
  // (foreground for content_bg, background for content_fg).
  double preserve_scale = 0.0;

  bool needs_saliency() const;
  /// True when the preset depends on dynamic p selection or the edge term,
  /// which IRLS does not model.
  bool requires_full_objective() const;
};

Preset resolve_preset(PresetId id);

/// The preset rendered as JSON text (parameter values and guidance steps).
std::string preset_json(const Preset& preset, int indent = 2);

/// Inputs of the energy derived from one image: modified guidance, the
/// important-edge mask and the optional per-pixel flattening scale.
struct Targets {
  GuidanceMap guide;
  BinaryMask important;
  std::optional<std::vector<double>> flatten_scale;
};

/// Runs the preset's guidance pipeline. `saliency` (set = foreground) is
/// required for content presets.
Targets build_targets(const Image& I, const Preset& preset, const BinaryMask* saliency = nullptr);

/// T + k (I - T), unclamped.
Image detail_magnify(const Image& I, const Image& T, double k);

}  // namespace smoothlab
