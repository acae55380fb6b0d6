#include "smoothlab/apps.hpp"

#include <cctype>
#include <cmath>
#include <json.hpp>

namespace smoothlab {

const char* preset_name(PresetId id) {
  switch (id) {
    case PresetId::flatten: return "flatten";
    case PresetId::abstract: return "abstract";
    case PresetId::detail: return "detail";
    case PresetId::texture: return "texture";
    case PresetId::content_bg: return "content_bg";
    case PresetId::content_fg: return "content_fg";
  }
  return "?";
}

const std::vector<PresetId>& all_presets() {
  static const std::vector<PresetId> ids = {PresetId::flatten, PresetId::abstract,
                                            PresetId::detail,  PresetId::texture,
                                            PresetId::content_bg, PresetId::content_fg};
  return ids;
}

PresetId parse_preset(const std::string& name) {
  std::string low = name;
  for (auto& ch : low) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (PresetId id : all_presets())
    if (low == preset_name(id)) return id;
  throw Error(Errc::invalid_argument,
              "unknown preset '" + name + "' (expected flatten, abstract, detail, texture, content_bg, content_fg)");
}

const char* guidance_step_name(GuidanceStep step) {
  switch (step) {
    case GuidanceStep::zero_texture: return "zero_texture";
    case GuidanceStep::zero_background: return "zero_background";
    case GuidanceStep::zero_foreground: return "zero_foreground";
  }
  return "?";
}

bool Preset::needs_saliency() const {
  return id == PresetId::content_bg || id == PresetId::content_fg;
}

bool Preset::requires_full_objective() const { return id != PresetId::flatten; }

Preset resolve_preset(PresetId id) {
  Preset p;
  p.id = id;
  switch (id) {
    case PresetId::flatten:
      break;
    case PresetId::abstract:
      p.params.large_dilation = 3;
      break;
    case PresetId::detail:
      p.params.alpha = 15.0;
      p.params.c1 = kInfinity;
      p.params.c2 = 0.0;
      break;
    case PresetId::texture:
      p.params.alpha = 20.0;
      p.params.h = 5;
      p.steps = {GuidanceStep::zero_texture};
      break;
    case PresetId::content_bg:
      p.params.h = 5;
      p.steps = {GuidanceStep::zero_background};
      break;
    case PresetId::content_fg:
      p.params.h = 5;
      p.steps = {GuidanceStep::zero_foreground};
      break;
  }
  return p;
}

std::string preset_json(const Preset& preset, int indent) {
  const EnergyParams& e = preset.params;
  nlohmann::ordered_json j;
  j["preset"] = preset_name(preset.id);
  nlohmann::ordered_json params;
  params["lambda_f"] = e.lambda_f;
  params["lambda_e"] = e.lambda_e;
  params["sigma_r"] = e.sigma_r;
  params["sigma_s"] = e.sigma_s;
  params["alpha"] = e.alpha;
  // JSON has no infinity
  params["c1"] = std::isinf(e.c1) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(e.c1);
  params["c2"] = e.c2;
  params["h"] = e.h;
  params["p_large"] = e.p_large;
  params["p_small"] = e.p_small;
  params["eps"] = e.eps;
  params["response_scale"] = e.response_scale;
  params["large_dilation"] = e.large_dilation;
  j["params"] = params;
  auto steps = nlohmann::ordered_json::array();
  for (auto s : preset.steps) steps.push_back(guidance_step_name(s));
  j["guidance_steps"] = steps;
  if (preset.needs_saliency()) j["preserve_scale"] = preset.preserve_scale;
  return j.dump(indent);
}

Targets build_targets(const Image& I, const Preset& preset, const BinaryMask* saliency) {
  Targets t;
  t.guide = edge_response(I, preset.params.neighborhood);
  if (preset.needs_saliency()) {
    if (!saliency) {
      throw Error(Errc::invalid_argument,
                  std::string("preset ") + preset_name(preset.id) + " needs a saliency mask");
    }
    if (saliency->height() != I.height() || saliency->width() != I.width()) {
      throw Error(Errc::shape, "saliency mask size differs from the image");
    }
  }
  for (auto step : preset.steps) {
    switch (step) {
      case GuidanceStep::zero_texture:
        t.guide = mask_guidance(t.guide, detect_texture(t.guide, preset.texture));
        break;
      case GuidanceStep::zero_background:
        t.guide = mask_guidance(t.guide, invert_mask(*saliency));
        break;
      case GuidanceStep::zero_foreground:
        t.guide = mask_guidance(t.guide, *saliency);
        break;
    }
  }
  t.important = detect_important_edges(t.guide, preset.edges);
  if (preset.needs_saliency()) {
    const bool keep_fg = preset.id == PresetId::content_bg;
    std::vector<double> scale(saliency->size(), 1.0);
    for (std::size_t i = 0; i < scale.size(); ++i)
      if (saliency->test(i) == keep_fg) scale[i] = preset.preserve_scale;
    t.flatten_scale = std::move(scale);
  }
  return t;
}

Image detail_magnify(const Image& I, const Image& T, double k) {
  require_same_shape(I, T, "detail_magnify");
  if (!(k >= 0.0)) throw Error(Errc::invalid_argument, "detail_magnify: k must be >= 0");
  Image out = T;
  auto& o = out.data();
  const auto& a = I.data();
  // k I + (1 - k) T keeps the k = 0 and k = 1 cases exact
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = k * a[i] + (1.0 - k) * o[i];
  out.set_unclamped(true);
  return out;
}

}  // namespace smoothlab
