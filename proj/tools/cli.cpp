#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include "smoothlab/apps.hpp"
#include "smoothlab/config.hpp"
#include "smoothlab/fileutil.hpp"
#include "smoothlab/network.hpp"
#include "smoothlab/parallel.hpp"
#include "smoothlab/solvers.hpp"
#include "smoothlab/synth.hpp"
#include "smoothlab/trainer.hpp"

namespace smoothlab::cli {

namespace {

int exit_code(Errc code) {
  switch (code) {
    case Errc::invalid_argument:
    case Errc::shape:
      return kUsage;
    case Errc::io:
    case Errc::format:
    case Errc::unsupported:
    case Errc::version:
      return kIo;
    case Errc::solver:
    case Errc::numeric:
    case Errc::state:
      return kSolver;
  }
  return kSolver;
}

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::string preset;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Common& c, bool with_preset = true) {
  cmd->add_option("--config", c.config_path, "JSON configuration file");
  if (with_preset) cmd->add_option("--preset", c.preset, "flatten|abstract|detail|texture|content_bg|content_fg");
  cmd->add_option("--threads", c.threads, "worker threads (default: $SMOOTHLAB_THREADS or 1)");
}

Config resolve(const Common& c) {
  std::optional<PresetId> preset;
  if (!c.preset.empty()) preset = parse_preset(c.preset);
  Config cfg = c.config_path.empty() ? resolve_config("", preset) : load_config(c.config_path, preset);
  if (c.threads && *c.threads < 1) throw Error(Errc::invalid_argument, "--threads must be >= 1");
  int threads = c.threads.value_or(0);
  if (threads == 0) {
    if (const char* env = std::getenv("SMOOTHLAB_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || v < 1 || v > 1024) {
        throw Error(Errc::invalid_argument, std::string("SMOOTHLAB_THREADS must be a positive integer, got '") + env + "'");
      }
      threads = static_cast<int>(v);
    }
  }
  if (threads > 0) {
    cfg.threads = threads;
    cfg.train.threads = threads;
  }
  return cfg;
}

void print_config(const Config& cfg, const std::string& command) {
  std::cout << "# " << command << " configuration\n" << config_json(cfg) << "\n";
}

// --- smooth -------------------------------------------------------------------

struct SmoothArgs {
  Common common;
  std::string input, output, solver = "gd", model, mask, trace, export_mask, magnify_out;
  double magnify_k = 3.0;
  std::uint64_t seed = 1;
};

std::string irls_rejection(const Preset& p) {
  std::string why;
  switch (p.id) {
    case PresetId::abstract: why = "it dilates the dynamically selected p_large set"; break;
    case PresetId::detail: why = "it relies on dynamic p selection (c1=inf, c2=0)"; break;
    case PresetId::texture: why = "it relies on dynamic p selection over texture-zeroed guidance"; break;
    case PresetId::content_bg:
    case PresetId::content_fg: why = "it relies on dynamic p selection over saliency-masked guidance"; break;
    case PresetId::flatten: break;
  }
  return std::string("solver irls cannot run preset '") + preset_name(p.id) + "': " + why +
         " and on the edge-preserving term, and IRLS only handles fixed p-maps without the edge term; "
         "use --solver gd or --solver cnn";
}

int cmd_smooth(const SmoothArgs& a) {
  Config cfg = resolve(a.common);
  cfg.train.seed = a.seed;
  if (a.solver == "irls" && cfg.preset_info.requires_full_objective()) {
    throw Usage(irls_rejection(cfg.preset_info));
  }
  if (a.solver == "cnn") {
    if (a.model.empty()) throw Usage("--solver cnn requires --model");
    if (!a.trace.empty()) throw Usage("--trace is not available for --solver cnn (a single forward pass)");
    if (!a.export_mask.empty()) throw Usage("--export-mask is not available for --solver cnn (no guidance is consulted)");
  }
  print_config(cfg, "smooth");

  const Image input = load_image(a.input);
  Image output;
  if (a.solver == "cnn") {
    const Network net = load_model(a.model);
    output = forward_smooth(net, to_rgb(input));
  } else {
    std::optional<BinaryMask> saliency;
    if (cfg.preset_info.needs_saliency()) {
      if (a.mask.empty()) {
        throw Usage(std::string("preset ") + preset_name(cfg.preset) + " needs --mask (saliency mask, white = foreground)");
      }
      saliency = load_mask(a.mask);
    }
    const Targets t = build_targets(input, cfg.preset_info, saliency ? &*saliency : nullptr);
    const EnergyModel model(input, t.important, t.guide, cfg.energy, t.flatten_scale);
    SolveResult res;
    if (a.solver == "gd") {
      res = solve_gd(model, cfg.gd);
    } else {
      res = solve_irls(model, cfg.irls);
    }
    const auto& e0 = res.trace.initial;
    const auto& e1 = res.trace.final_energy();
    std::fprintf(stdout, "energy: initial %.6g -> final %.6g (data %.6g, flatten %.6g, edge %.6g) after %zu iterations\n",
                 e0.total, e1.total, e1.data, e1.flatten, e1.edge, res.trace.rows.size());
    if (!a.trace.empty()) write_file_atomic(a.trace, res.trace.to_csv());
    if (!a.export_mask.empty()) save_mask(t.important, a.export_mask);
    output = std::move(res.output);
  }
  save_image(output, a.output);
  if (!a.magnify_out.empty()) {
    const Image base = output.channels() == input.channels() ? input : to_rgb(input);
    save_image(detail_magnify(base, output, a.magnify_k), a.magnify_out);
  }
  std::cout << "wrote " << a.output << "\n";
  return kOk;
}

// --- train / eval / precompute ----------------------------------------------------

struct TrainArgs {
  Common common;
  std::string corpus, out, overfit, init, arch, schedule;
  std::optional<int> epochs, crop, checkpoint_every, steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  Config cfg = resolve(a.common);
  TrainConfig& t = cfg.train;
  if (a.epochs) t.epochs = *a.epochs;
  if (a.crop) t.crop = *a.crop;
  if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
  if (a.steps) t.overfit_steps = *a.steps;
  if (a.lr) t.learning_rate = *a.lr;
  if (a.seed) t.seed = *a.seed;
  if (!a.arch.empty()) t.arch = parse_architecture(a.arch);
  if (!a.schedule.empty()) {
    if (a.schedule == "cosine") t.schedule = TrainConfig::Schedule::cosine;
    else if (a.schedule == "constant") t.schedule = TrainConfig::Schedule::constant;
    else throw Usage("--schedule must be constant or cosine");
  }
  if (a.corpus.empty() && a.overfit.empty()) throw Usage("train needs --corpus DIR or --overfit IMAGE");
  t.corpus_dir = a.corpus;
  t.out_dir = a.out;
  if (!a.overfit.empty()) t.overfit_single = a.overfit;
  t.validate();
  print_config(cfg, "train");

  Network init;
  if (!a.init.empty()) {
    init = load_model(a.init);
  } else {
    Rng rng(t.seed);
    init = make_network(t.arch, rng);
  }
  const TrainResult res = run_training(init, t);
  std::cout << train_log_csv(res.epochs);
  std::cout << "steps: " << res.steps << "\nwrote " << (fs::path(a.out) / "model.usis").string() << "\n";
  return kOk;
}

struct EvalArgs {
  Common common;
  std::string model, images, out;
};

int cmd_eval(const EvalArgs& a) {
  Config cfg = resolve(a.common);
  print_config(cfg, "eval");
  const Network net = load_model(a.model);
  const auto files = list_images(a.images);
  if (files.empty()) throw Usage("no images found in " + a.images);
  std::vector<EvalRow> rows(files.size());
  parallel_for(files.size(), cfg.threads, [&](std::size_t i) {
    const Image I = to_rgb(load_image(files[i]));
    const Image T = forward_smooth(net, I);
    std::optional<BinaryMask> sal;
    if (cfg.preset_info.needs_saliency()) {
      const auto mp = saliency_path(a.images, files[i]);
      if (!mp) throw Error(Errc::io, "missing saliency mask for " + files[i].filename().string());
      sal = load_mask(*mp);
    }
    CorpusEntry e;
    e.image = I;
    e.targets = build_targets(I, cfg.preset_info, sal ? &*sal : nullptr);
    rows[i] = {files[i].filename().string(), output_energy(e, cfg.energy, T)};
  });
  const std::string csv = eval_csv(rows);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file_atomic(a.out, csv);
    std::cout << "wrote " << a.out << " (" << rows.size() << " images)\n";
  }
  return kOk;
}

struct PrecomputeArgs {
  Common common;
  std::string corpus;
};

int cmd_precompute(const PrecomputeArgs& a) {
  Config cfg = resolve(a.common);
  print_config(cfg, "precompute");
  if (list_images(a.corpus).empty()) throw Usage("no images found in " + a.corpus);
  const CorpusIndex index = precompute_targets(a.corpus, cfg.preset, cfg.threads);
  const std::size_t n = index.entries.size();
  std::cout << "precomputed " << n << " images: " << index.cache_hits << " cache hits, "
            << (n - index.cache_hits) << " computed\n";
  return kOk;
}

// --- compare-solvers --------------------------------------------------------------

struct CompareArgs {
  Common common;
  std::string images, out;
  std::vector<std::string> modes = {"all_large", "all_small", "half_half", "dynamic"};
  std::vector<std::string> solvers = {"gd", "irls", "cnn"};
  std::optional<int> steps;
  std::uint64_t seed = 1;
};

std::string trace_rows(const std::string& image, const SolveTrace& tr) {
  std::ostringstream out;
  std::istringstream in(tr.to_csv());
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) out << image << "," << line << "\n";
  return out.str();
}

int cmd_compare(const CompareArgs& a) {
  Config cfg = resolve(a.common);
  if (a.steps) cfg.train.overfit_steps = *a.steps;
  cfg.train.seed = a.seed;
  print_config(cfg, "compare-solvers");
  const auto files = list_images(a.images);
  if (files.empty()) throw Usage("no images found in " + a.images);
  std::vector<PMode> modes;
  for (const auto& m : a.modes) {
    const PMode pm = parse_pmode(m);
    if (pm == PMode::frozen) throw Usage("--modes cannot include frozen");
    modes.push_back(pm);
  }
  for (const auto& s : a.solvers)
    if (s != "gd" && s != "irls" && s != "cnn") throw Usage("unknown solver '" + s + "' (expected gd, irls, cnn)");

  struct Cell {
    PMode mode;
    std::string solver;
    std::string skipped;
  };
  std::vector<Cell> cells;
  for (PMode m : modes)
    for (const auto& s : a.solvers) {
      Cell c{m, s, ""};
      if (s == "irls" && m == PMode::dynamic) {
        c.skipped = "irls needs a fixed p-map; dynamic selection has no quadratic majorizer";
      } else if (s == "irls" && cfg.preset_info.requires_full_objective()) {
        c.skipped = std::string("irls cannot run preset ") + preset_name(cfg.preset);
      }
      cells.push_back(c);
    }

  std::vector<std::optional<BinaryMask>> saliency(files.size());
  std::vector<Image> images(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    images[i] = load_image(files[i]);
    if (cfg.preset_info.needs_saliency()) {
      const auto mp = saliency_path(a.images, files[i]);
      if (!mp) throw Error(Errc::io, "missing saliency mask for " + files[i].filename().string());
      saliency[i] = load_mask(*mp);
    }
  }

  // traces[cell][image]
  std::vector<std::vector<SolveTrace>> traces(cells.size(), std::vector<SolveTrace>(files.size()));
  const std::size_t jobs = cells.size() * files.size();
  parallel_for(jobs, cfg.threads, [&](std::size_t job) {
    const std::size_t ci = job / files.size(), ii = job % files.size();
    const Cell& cell = cells[ci];
    if (!cell.skipped.empty()) return;
    EnergyParams params = cfg.energy;
    // fixed-map cells compare the objective IRLS can minimize
    if (cell.mode != PMode::dynamic) params.lambda_e = 0.0;
    Preset preset = cfg.preset_info;
    preset.params = params;
    const Image I = cell.solver == "cnn" ? to_rgb(images[ii]) : images[ii];
    const Targets t = build_targets(I, preset, saliency[ii] ? &*saliency[ii] : nullptr);
    const EnergyModel model(I, t.important, t.guide, params, t.flatten_scale);
    if (cell.solver == "gd") {
      GdConfig g = cfg.gd;
      g.p_mode = cell.mode;
      traces[ci][ii] = solve_gd(model, g).trace;
    } else if (cell.solver == "irls") {
      IrlsConfig c = cfg.irls;
      c.p_mode = cell.mode;
      traces[ci][ii] = solve_irls(model, c).trace;
    } else {
      TrainConfig tc = cfg.train;
      tc.p_mode = cell.mode;
      tc.params = params;
      tc.out_dir.clear();
      Rng rng(tc.seed);
      const Network init = make_network(tc.arch, rng);
      CorpusEntry e;
      e.image = I;
      e.targets = t;
      traces[ci][ii] = overfit_single(init, e, tc).trace;
    }
  });

  fs::create_directories(a.out);
  std::string summary = "mode,solver,images,mean_initial,mean_final\n";
  std::string skipped = "mode,solver,reason\n";
  char buf[256];
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& cell = cells[ci];
    const std::string name = std::string(pmode_name(cell.mode)) + "_" + cell.solver;
    if (!cell.skipped.empty()) {
      skipped += std::string(pmode_name(cell.mode)) + "," + cell.solver + "," + cell.skipped + "\n";
      continue;
    }
    std::string csv = "image,iter,total,data,flatten,edge,ms\n";
    std::vector<double> init, fin;
    for (std::size_t ii = 0; ii < files.size(); ++ii) {
      csv += trace_rows(files[ii].filename().string(), traces[ci][ii]);
      init.push_back(traces[ci][ii].initial.total);
      fin.push_back(traces[ci][ii].final_energy().total);
    }
    write_file_atomic(fs::path(a.out) / (name + ".csv"), csv);
    const double n = static_cast<double>(files.size());
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.17g,%.17g\n", pmode_name(cell.mode), cell.solver.c_str(),
                  files.size(), pairwise_sum(init) / n, pairwise_sum(fin) / n);
    summary += buf;
  }
  write_file_atomic(fs::path(a.out) / "summary.csv", summary);
  write_file_atomic(fs::path(a.out) / "skipped.csv", skipped);
  std::cout << summary;
  if (skipped.find('\n') + 1 < skipped.size()) std::cout << "skipped:\n" << skipped.substr(skipped.find('\n') + 1);
  return kOk;
}

// --- presets / synth --------------------------------------------------------------

int cmd_presets(const std::string& id) {
  if (!id.empty()) {
    std::cout << preset_json(resolve_preset(parse_preset(id))) << "\n";
    return kOk;
  }
  std::cout << "[\n";
  const auto& ids = all_presets();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    std::cout << preset_json(resolve_preset(ids[k])) << (k + 1 < ids.size() ? ",\n" : "\n");
  }
  std::cout << "]\n";
  return kOk;
}

struct SynthArgs {
  std::string out;
  int count = 50;
  int size = 64;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1 || a.size < 8) throw Usage("synth needs --count >= 1 and --size >= 8");
  fs::create_directories(a.out);
  const auto imgs = synth::corpus(a.count, a.size, a.seed);
  for (int k = 0; k < a.count; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", k);
    save_image(imgs[static_cast<std::size_t>(k)], fs::path(a.out) / name);
  }
  std::cout << "wrote " << a.count << " images to " << a.out << "\n";
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"smoothlab: energy-based image smoothing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "smoothlab 0.1.0");

  SmoothArgs sm;
  auto* smooth = app.add_subcommand("smooth", "smooth one image");
  smooth->add_option("--input", sm.input, "input image (png, ppm, pgm)")->required();
  smooth->add_option("--output", sm.output, "output image; .png writes PNG, otherwise PPM/PGM")->required();
  smooth->add_option("--solver", sm.solver, "gd | irls | cnn")->check(CLI::IsMember({"gd", "irls", "cnn"}));
  smooth->add_option("--model", sm.model, "model file for --solver cnn");
  smooth->add_option("--mask", sm.mask, "saliency mask for content presets (white = foreground)");
  smooth->add_option("--trace", sm.trace, "write the per-iteration energy trace as CSV");
  smooth->add_option("--export-mask", sm.export_mask, "write the important-edge mask B");
  smooth->add_option("--magnify-out", sm.magnify_out, "also write T + k (I - T)");
  smooth->add_option("--magnify-k", sm.magnify_k, "detail enhancement factor (default 3)")->check(CLI::NonNegativeNumber);
  smooth->add_option("--seed", sm.seed, "recorded in the configuration");
  add_common(smooth, sm.common);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train a network on a corpus without labels");
  train->add_option("--corpus", tr.corpus, "directory of training images");
  train->add_option("--out", tr.out, "output directory for model.usis, model.json, train_log.csv")->required();
  train->add_option("--epochs", tr.epochs);
  train->add_option("--crop", tr.crop);
  train->add_option("--lr", tr.lr);
  train->add_option("--seed", tr.seed);
  train->add_option("--arch", tr.arch, "TOY8 | PAPER26");
  train->add_option("--checkpoint-every", tr.checkpoint_every);
  train->add_option("--overfit", tr.overfit, "train on this single image instead of a corpus");
  train->add_option("--steps", tr.steps, "update steps in --overfit mode");
  train->add_option("--init", tr.init, "start from this model instead of a fresh initialization");
  train->add_option("--schedule", tr.schedule, "constant | cosine");
  add_common(train, tr.common);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "score network outputs on a directory of images");
  eval->add_option("--model", ev.model)->required();
  eval->add_option("--images", ev.images)->required();
  eval->add_option("--out", ev.out, "CSV path (default: standard output)");
  add_common(eval, ev.common);

  PrecomputeArgs pc;
  auto* pre = app.add_subcommand("precompute", "cache guidance maps and masks for a corpus");
  pre->add_option("--corpus", pc.corpus)->required();
  add_common(pre, pc.common);

  CompareArgs cmp;
  auto* compare = app.add_subcommand("compare-solvers", "loss curves of gd, irls and an overfit network per p-map mode");
  compare->add_option("--images", cmp.images)->required();
  compare->add_option("--out", cmp.out)->required();
  compare->add_option("--modes", cmp.modes, "subset of all_large all_small half_half dynamic")->delimiter(',');
  compare->add_option("--solvers", cmp.solvers, "subset of gd irls cnn")->delimiter(',');
  compare->add_option("--steps", cmp.steps, "network update steps per image (default 500)");
  compare->add_option("--seed", cmp.seed, "network initialization seed");
  add_common(compare, cmp.common);

  std::string preset_id;
  auto* presets = app.add_subcommand("presets", "print preset parameters as JSON");
  presets->add_option("--preset", preset_id);

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "write a deterministic synthetic image corpus");
  synth_cmd->add_option("--out", sy.out)->required();
  synth_cmd->add_option("--count", sy.count);
  synth_cmd->add_option("--size", sy.size);
  synth_cmd->add_option("--seed", sy.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*smooth) return cmd_smooth(sm);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*pre) return cmd_precompute(pc);
    if (*compare) return cmd_compare(cmp);
    if (*presets) return cmd_presets(preset_id);
    if (*synth_cmd) return cmd_synth(sy);
  } catch (const Usage& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  }
  return kUsage;
}

}  // namespace smoothlab::cli
