#pragma once

#include <optional>
#include <string>

#include "smoothlab/apps.hpp"
#include "smoothlab/solvers.hpp"
#include "smoothlab/trainer.hpp"

namespace smoothlab {

/// Everything a command needs, resolved from preset defaults plus a JSON
/// document:
///   { "preset": "...", "threads": n,
///     "energy": {...EnergyParams fields...}, "gd": {...}, "irls": {...},
///     "train": {...} }
/// Absent keys keep their defaults; unknown keys are errors.
struct Config {
  PresetId preset = PresetId::flatten;
  Preset preset_info;
  EnergyParams energy;
  GdConfig gd;
  IrlsConfig irls;
  TrainConfig train;
  int threads = 1;
};

/// `preset_override` (e.g. a --preset flag) wins over the document's
/// "preset". Energy overrides apply on top of the preset's values. Errors are
/// Errc::invalid_argument naming the key path, e.g. "energy.h: must be odd".
Config resolve_config(const std::string& json_text, std::optional<PresetId> preset_override = std::nullopt);
Config load_config(const std::string& path, std::optional<PresetId> preset_override = std::nullopt);

/// Fully resolved configuration as JSON.
std::string config_json(const Config& cfg, int indent = 2);

}  // namespace smoothlab
