#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smoothlab/apps.hpp"
#include "smoothlab/network.hpp"
#include "smoothlab/solvers.hpp"

namespace smoothlab {

namespace fs = std::filesystem;

struct TrainConfig {
  fs::path corpus_dir;
  int epochs = 30;
  int crop = 64;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // constant, or cosine decay from learning_rate to 0 over the run
  enum class Schedule { constant, cosine } schedule = Schedule::constant;
  std::uint64_t seed = 1;
  PresetId preset = PresetId::flatten;
  Architecture arch = Architecture::toy8;
  int checkpoint_every = 1;     // epochs; 0 disables intermediate checkpoints
  fs::path out_dir;             // checkpoints and log; empty writes nothing
  std::optional<fs::path> overfit_single;
  int overfit_steps = 500;
  PMode p_mode = PMode::dynamic;  // fixed maps are used by solver comparisons
  std::optional<EnergyParams> params;  // replaces the preset's parameters
  double norm_decay = 0.99;
  int threads = 1;              // precompute / evaluation workers

  void validate() const;
  EnergyParams energy_params() const;
};

/// Image files (png, ppm, pgm, pnm) directly inside `dir`, sorted by name.
std::vector<fs::path> list_images(const fs::path& dir);

/// <dir>/masks/<stem>.png or .pgm, if present.
std::optional<fs::path> saliency_path(const fs::path& dir, const fs::path& image);

struct CorpusEntry {
  fs::path path;
  Image image;
  Targets targets;
  bool cache_hit = false;
};

struct CorpusIndex {
  PresetId preset = PresetId::flatten;
  std::vector<CorpusEntry> entries;
  std::size_t cache_hits = 0;

  /// Entry order for an epoch, a seeded shuffle.
  std::vector<std::size_t> epoch_order(int epoch, std::uint64_t seed) const;
};

inline constexpr const char* kCacheDirName = ".smoothlab_cache";

/// Loads every image, runs the preset's guidance pipeline and caches the
/// result in <dir>/.smoothlab_cache keyed by the image, mask and preset
/// content. Images that fail (missing saliency mask, unreadable) are listed
/// together in one error.
CorpusIndex precompute_targets(const fs::path& dir, PresetId preset, int threads = 1);

/// Same pipeline for an in-memory image (no cache).
CorpusEntry make_entry(const Image& image, PresetId preset, const BinaryMask* saliency = nullptr);

struct EpochLog {
  int epoch = 0;
  EnergyBreakdown mean;
};

struct TrainResult {
  Network net;
  std::vector<EpochLog> epochs;
  long steps = 0;
  SolveTrace trace;  // overfit mode: energy per step
};

/// epoch,mean_total,mean_data,mean_flatten,mean_edge
std::string train_log_csv(const std::vector<EpochLog>& epochs);

/// Adam over image crops, the energy as loss. Returns the trained copy.
TrainResult train(const Network& init, const CorpusIndex& corpus, const TrainConfig& cfg);

/// cfg.overfit_steps updates on one full image. trace.initial is the energy
/// of the initial output, row k the energy after k updates.
TrainResult overfit_single(const Network& init, const CorpusEntry& entry, const TrainConfig& cfg);

/// Convenience wrapper: precompute (or the overfit image) and train.
TrainResult run_training(const Network& init, const TrainConfig& cfg);

/// Energy of a network output for an entry, with the p-map selected from it.
EnergyBreakdown output_energy(const CorpusEntry& entry, const EnergyParams& params, const Image& T);

struct EvalRow {
  std::string image;
  EnergyBreakdown energy;
};

/// One inference forward pass per image; masks only score the output.
std::vector<EvalRow> evaluate(const Network& net, const fs::path& image_dir, PresetId preset,
                              int threads = 1);
/// image,total,data,flatten,edge
std::string eval_csv(const std::vector<EvalRow>& rows);

}  // namespace smoothlab
