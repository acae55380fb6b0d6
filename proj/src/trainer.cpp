#include "smoothlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <sstream>

#include "smoothlab/fileutil.hpp"
#include "smoothlab/parallel.hpp"

namespace smoothlab {

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(Errc::invalid_argument, "train.epochs must be >= 0");
  if (crop < 8) throw Error(Errc::invalid_argument, "train.crop must be >= 8");
  if (arch == Architecture::paper26 && crop % 2 != 0) {
    throw Error(Errc::invalid_argument, "train.crop must be even for PAPER26");
  }
  if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "train.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(Errc::invalid_argument, "train.beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(Errc::invalid_argument, "train.beta2 must be in [0,1)");
  if (checkpoint_every < 0) throw Error(Errc::invalid_argument, "train.checkpoint_every must be >= 0");
  if (overfit_steps < 0) throw Error(Errc::invalid_argument, "train.overfit_steps must be >= 0");
  if (!(norm_decay >= 0.0 && norm_decay < 1.0)) throw Error(Errc::invalid_argument, "train.norm_decay must be in [0,1)");
  if (threads < 1) throw Error(Errc::invalid_argument, "train.threads must be >= 1");
  if (p_mode == PMode::frozen) throw Error(Errc::invalid_argument, "train.p_mode cannot be frozen");
  energy_params().validate();
}

EnergyParams TrainConfig::energy_params() const {
  return params ? *params : resolve_preset(preset).params;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(Errc::io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<fs::path> saliency_path(const fs::path& dir, const fs::path& image) {
  for (const char* ext : {".png", ".pgm"}) {
    fs::path p = dir / "masks" / (image.stem().string() + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

std::vector<std::size_t> CorpusIndex::epoch_order(int epoch, std::uint64_t seed) const {
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
  shuffle(order.begin(), order.end(), rng);
  return order;
}

CorpusEntry make_entry(const Image& image, PresetId preset, const BinaryMask* saliency) {
  CorpusEntry e;
  e.image = to_rgb(image);
  e.targets = build_targets(e.image, resolve_preset(preset), saliency);
  return e;
}

// --- target cache -------------------------------------------------------------

namespace {

constexpr char kCacheMagic[4] = {'S', 'L', 'C', '1'};

std::uint64_t cache_key(const std::vector<unsigned char>& image_bytes,
                        const std::vector<unsigned char>* mask_bytes, const Preset& preset) {
  Fnv1a h;
  h.update(std::string_view("smoothlab-targets-v1"));
  h.update_value(image_bytes.size());
  h.update(image_bytes);
  if (mask_bytes) {
    h.update_value(mask_bytes->size());
    h.update(*mask_bytes);
  }
  h.update(preset_json(preset, -1));
  const auto& e = preset.edges;
  const auto& t = preset.texture;
  for (double v : {e.high, e.low, static_cast<double>(e.min_len), t.edge_threshold,
                   static_cast<double>(t.window), t.density, static_cast<double>(t.max_len)}) {
    h.update_value(v);
  }
  return h.digest();
}

template <typename T>
void put(std::vector<unsigned char>& out, const T& v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

std::vector<unsigned char> encode_targets(std::uint64_t key, const Targets& t) {
  std::vector<unsigned char> out(kCacheMagic, kCacheMagic + 4);
  put(out, key);
  put(out, static_cast<std::int32_t>(t.guide.height));
  put(out, static_cast<std::int32_t>(t.guide.width));
  for (double v : t.guide.response) put(out, v);
  out.insert(out.end(), t.important.bits().begin(), t.important.bits().end());
  put(out, static_cast<std::uint8_t>(t.flatten_scale ? 1 : 0));
  if (t.flatten_scale)
    for (double v : *t.flatten_scale) put(out, v);
  return out;
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b) : b_(b) {}
  template <typename T>
  bool get(T& v) {
    if (b_.size() - pos_ < sizeof(T)) return false;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return true;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

std::optional<Targets> decode_targets(const std::vector<unsigned char>& bytes, std::uint64_t key,
                                      int h, int w) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCacheMagic, 4) != 0) return std::nullopt;
  std::vector<unsigned char> rest(bytes.begin() + 4, bytes.end());
  ByteReader r(rest);
  std::uint64_t k;
  std::int32_t hh, ww;
  if (!r.get(k) || k != key || !r.get(hh) || !r.get(ww) || hh != h || ww != w) return std::nullopt;
  Targets t;
  t.guide = GuidanceMap(h, w);
  for (auto& v : t.guide.response)
    if (!r.get(v)) return std::nullopt;
  t.important = BinaryMask(h, w);
  for (std::size_t i = 0; i < t.important.size(); ++i) {
    std::uint8_t b;
    if (!r.get(b)) return std::nullopt;
    t.important.set(i, b != 0);
  }
  std::uint8_t has_scale;
  if (!r.get(has_scale)) return std::nullopt;
  if (has_scale) {
    std::vector<double> s(static_cast<std::size_t>(h) * w);
    for (auto& v : s)
      if (!r.get(v)) return std::nullopt;
    t.flatten_scale = std::move(s);
  }
  if (!r.done()) return std::nullopt;
  return t;
}

CorpusEntry load_entry(const fs::path& dir, const fs::path& path, const Preset& preset) {
  const auto image_bytes = read_file_bytes(path);
  CorpusEntry e;
  e.path = path;
  e.image = to_rgb(load_image(path));
  std::optional<BinaryMask> saliency;
  std::vector<unsigned char> mask_bytes;
  if (preset.needs_saliency()) {
    const auto mp = saliency_path(dir, path);
    if (!mp) {
      throw Error(Errc::io, "missing saliency mask " + (dir / "masks" / (path.stem().string() + ".png")).string());
    }
    mask_bytes = read_file_bytes(*mp);
    saliency = load_mask(*mp);
  }
  const std::uint64_t key = cache_key(image_bytes, saliency ? &mask_bytes : nullptr, preset);
  const fs::path cache_file =
      dir / kCacheDirName / (path.filename().string() + "." + preset_name(preset.id) + ".bin");
  std::error_code ec;
  if (fs::is_regular_file(cache_file, ec)) {
    auto cached = decode_targets(read_file_bytes(cache_file), key, e.image.height(), e.image.width());
    if (cached) {
      e.targets = std::move(*cached);
      e.cache_hit = true;
      return e;
    }
  }
  e.targets = build_targets(e.image, preset, saliency ? &*saliency : nullptr);
  fs::create_directories(cache_file.parent_path(), ec);
  write_file_atomic(cache_file, encode_targets(key, e.targets));
  return e;
}

}  // namespace

CorpusIndex precompute_targets(const fs::path& dir, PresetId preset_id, int threads) {
  const auto files = list_images(dir);
  if (files.empty()) throw Error(Errc::invalid_argument, "no images found in " + dir.string());
  const Preset preset = resolve_preset(preset_id);
  CorpusIndex index;
  index.preset = preset_id;
  index.entries.resize(files.size());
  std::vector<std::string> errors(files.size());
  std::vector<Errc> codes(files.size(), Errc::io);
  parallel_for(files.size(), threads, [&](std::size_t i) {
    try {
      index.entries[i] = load_entry(dir, files[i], preset);
    } catch (const Error& e) {
      errors[i] = files[i].filename().string() + ": " + e.what();
      codes[i] = e.code();
    }
  });
  std::string listing;
  std::optional<Errc> first;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (errors[i].empty()) continue;
    if (!first) first = codes[i];
    listing += "\n  " + errors[i];
  }
  if (first) throw Error(*first, "precompute failed for some images:" + listing);
  for (const auto& e : index.entries) index.cache_hits += e.cache_hit ? 1 : 0;
  return index;
}

// --- training -------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

struct Adam {
  std::vector<std::vector<double>> m, v;
  long t = 0;

  void step(Network& net, const Gradients& grads, const TrainConfig& cfg, double lr) {
    auto params = net.parameters();
    if (m.empty()) {
      for (const auto* p : params) {
        m.emplace_back(p->size(), 0.0);
        v.emplace_back(p->size(), 0.0);
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * g[i];
        v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double upd = lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + cfg.adam_eps);
        p[i] = static_cast<double>(static_cast<float>(p[i] - upd));
      }
    }
  }

  std::uint64_t digest() const {
    Fnv1a h;
    h.update_value(t);
    for (const auto* set : {&m, &v})
      for (const auto& vec : *set)
        h.update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(vec.data()),
                                                vec.size() * sizeof(double)));
    return h.digest();
  }
};

struct StepOutput {
  EnergyBreakdown energy;
  Image output;
};

// Forward, energy, backward and one Adam update.
StepOutput train_step(Network& net, Adam& adam, const Image& I, const EnergyModel& model,
                      const TrainConfig& cfg, bool update, double lr) {
  ForwardTape tape;
  const Tensor r = residual_forward(net, I, NormMode::train, &tape);
  StepOutput out;
  out.output = I;
  for (std::size_t k = 0; k < r.size(); ++k) out.output.data()[k] += r.data[k];
  out.output.set_unclamped(true);
  const PMap pm = cfg.p_mode == PMode::dynamic
                      ? model.select(out.output)
                      : fixed_pmap(cfg.p_mode, I.height(), I.width());
  Image grad;
  out.energy = model.evaluate(out.output, pm, grad);
  if (!std::isfinite(out.energy.total) || !grad.all_finite()) {
    throw Error(Errc::numeric, "non-finite training loss");
  }
  if (!update) return out;
  const Gradients grads = backward(net, tape, image_to_tensor(grad));
  adam.step(net, grads, cfg, lr);
  update_running_stats(net, tape, cfg.norm_decay);
  return out;
}

double scheduled_lr(const TrainConfig& cfg, long step, long total) {
  if (cfg.schedule == TrainConfig::Schedule::constant || total <= 0) return cfg.learning_rate;
  const double pi = std::acos(-1.0);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

EnergyModel entry_model(const Image& I, const Targets& t, const EnergyParams& params) {
  return EnergyModel(I, t.important, t.guide, params, t.flatten_scale);
}

void write_checkpoint(const Network& net, const Adam& adam, const TrainConfig& cfg, int epoch, long step) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["seed"] = cfg.seed;
  j["preset"] = preset_name(cfg.preset);
  j["arch"] = architecture_name(net.arch);
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer_moments_digest"] = hex64(adam.digest());
  // model first: a sidecar never describes a model that is not on disk
  save_model(net, (cfg.out_dir / "model.usis").string());
  write_file_atomic(cfg.out_dir / "model.json", j.dump(2) + "\n");
}

EnergyBreakdown mean_of(const std::vector<EnergyBreakdown>& v) {
  std::vector<double> d, f, e, t;
  for (const auto& x : v) {
    d.push_back(x.data);
    f.push_back(x.flatten);
    e.push_back(x.edge);
    t.push_back(x.total);
  }
  const double n = static_cast<double>(std::max<std::size_t>(v.size(), 1));
  return {pairwise_sum(d) / n, pairwise_sum(f) / n, pairwise_sum(e) / n, pairwise_sum(t) / n};
}

}  // namespace

std::string train_log_csv(const std::vector<EpochLog>& epochs) {
  std::ostringstream out;
  out << "epoch,mean_total,mean_data,mean_flatten,mean_edge\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.mean.total, e.mean.data,
                  e.mean.flatten, e.mean.edge);
    out << buf;
  }
  return out.str();
}

TrainResult train(const Network& init, const CorpusIndex& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.entries.empty()) throw Error(Errc::invalid_argument, "training corpus is empty");
  const EnergyParams params = cfg.energy_params();
  TrainResult res;
  res.net = init;
  Adam adam;
  Rng crop_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<EnergyBreakdown> energies;
    for (std::size_t idx : corpus.epoch_order(epoch, cfg.seed)) {
      const CorpusEntry& e = corpus.entries[idx];
      const Image& full = e.image;
      if (full.height() < cfg.crop || full.width() < cfg.crop) {
        throw Error(Errc::invalid_argument, "image " + e.path.filename().string() + " is smaller than the " +
                                                std::to_string(cfg.crop) + " px crop");
      }
      const CropWindow win = random_crop_window(full.height(), full.width(), cfg.crop, crop_rng);
      const Image I = crop(full, win.x0, win.y0, win.size);
      Targets t;
      t.guide = crop(e.targets.guide, win.x0, win.y0, win.size, win.size);
      t.important = crop(e.targets.important, win.x0, win.y0, win.size, win.size);
      if (e.targets.flatten_scale) {
        std::vector<double> s;
        s.reserve(static_cast<std::size_t>(win.size) * win.size);
        for (int y = 0; y < win.size; ++y)
          for (int x = 0; x < win.size; ++x)
            s.push_back((*e.targets.flatten_scale)[static_cast<std::size_t>(win.y0 + y) * full.width() + win.x0 + x]);
        t.flatten_scale = std::move(s);
      }
      const EnergyModel model = entry_model(I, t, params);
      try {
        const long total = static_cast<long>(cfg.epochs) * static_cast<long>(corpus.entries.size());
        energies.push_back(train_step(res.net, adam, I, model, cfg, true, scheduled_lr(cfg, res.steps, total)).energy);
      } catch (const Error& err) {
        if (err.code() != Errc::numeric) throw;
        throw Error(Errc::numeric, "training halted at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(res.steps + 1) + ": non-finite loss" +
                                       (cfg.out_dir.empty() ? "" : "; last checkpoint retained in " + cfg.out_dir.string()));
      }
      ++res.steps;
    }
    res.epochs.push_back({epoch, mean_of(energies)});
    if (!cfg.out_dir.empty()) {
      fs::create_directories(cfg.out_dir);
      write_file_atomic(cfg.out_dir / "train_log.csv", train_log_csv(res.epochs));
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
        write_checkpoint(res.net, adam, cfg, epoch, res.steps);
      }
    }
  }
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_file_atomic(cfg.out_dir / "train_log.csv", train_log_csv(res.epochs));
    write_checkpoint(res.net, adam, cfg, cfg.epochs, res.steps);
  }
  return res;
}

TrainResult overfit_single(const Network& init, const CorpusEntry& entry, const TrainConfig& cfg) {
  cfg.validate();
  const EnergyParams params = cfg.energy_params();
  const EnergyModel model = entry_model(entry.image, entry.targets, params);
  TrainResult res;
  res.net = init;
  Adam adam;
  auto start = Clock::now();
  for (int s = 0; s <= cfg.overfit_steps; ++s) {
    const bool update = s < cfg.overfit_steps;
    const StepOutput out = train_step(res.net, adam, entry.image, model, cfg, update, scheduled_lr(cfg, s, cfg.overfit_steps));
    if (s == 0) {
      res.trace.initial = out.energy;
    } else {
      TraceRow row;
      row.energy = out.energy;
      row.ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      res.trace.rows.push_back(row);
    }
    start = Clock::now();
    if (update) ++res.steps;
  }
  res.epochs.push_back({1, res.trace.final_energy()});
  // one image: inference statistics can be exact instead of an EMA that lags the weights
  if (cfg.overfit_steps > 0) calibrate_running_stats(res.net, {entry.image});
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_file_atomic(cfg.out_dir / "train_log.csv", train_log_csv(res.epochs));
    write_file_atomic(cfg.out_dir / "overfit_trace.csv", res.trace.to_csv());
    write_checkpoint(res.net, adam, cfg, 1, res.steps);
  }
  return res;
}

TrainResult run_training(const Network& init, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.overfit_single) {
    const fs::path& p = *cfg.overfit_single;
    std::optional<BinaryMask> sal;
    const Preset preset = resolve_preset(cfg.preset);
    if (preset.needs_saliency()) {
      const auto mp = saliency_path(p.parent_path(), p);
      if (!mp) throw Error(Errc::io, "missing saliency mask for " + p.string());
      sal = load_mask(*mp);
    }
    CorpusEntry e = make_entry(load_image(p), cfg.preset, sal ? &*sal : nullptr);
    e.path = p;
    return overfit_single(init, e, cfg);
  }
  const CorpusIndex index = precompute_targets(cfg.corpus_dir, cfg.preset, cfg.threads);
  return train(init, index, cfg);
}

EnergyBreakdown output_energy(const CorpusEntry& entry, const EnergyParams& params, const Image& T) {
  const EnergyModel model = entry_model(entry.image, entry.targets, params);
  return model.evaluate(T, model.select(T));
}

std::vector<EvalRow> evaluate(const Network& net, const fs::path& image_dir, PresetId preset_id, int threads) {
  const auto files = list_images(image_dir);
  if (files.empty()) throw Error(Errc::invalid_argument, "no images found in " + image_dir.string());
  const Preset preset = resolve_preset(preset_id);
  std::vector<EvalRow> rows(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    const Image I = to_rgb(load_image(files[i]));
    // the network sees only the image
    const Image T = forward_smooth(net, I);
    std::optional<BinaryMask> sal;
    if (preset.needs_saliency()) {
      const auto mp = saliency_path(image_dir, files[i]);
      if (!mp) throw Error(Errc::io, "missing saliency mask for " + files[i].filename().string());
      sal = load_mask(*mp);
    }
    CorpusEntry e = make_entry(I, preset_id, sal ? &*sal : nullptr);
    rows[i] = {files[i].filename().string(), output_energy(e, preset.params, T)};
  });
  return rows;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "image,total,data,flatten,edge\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g\n", r.energy.total, r.energy.data,
                  r.energy.flatten, r.energy.edge);
    out << r.image << buf;
  }
  return out.str();
}

}  // namespace smoothlab
