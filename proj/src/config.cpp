#include "smoothlab/config.hpp"

#include <cmath>
#include <json.hpp>
#include <map>
#include <set>

#include "smoothlab/fileutil.hpp"

namespace smoothlab {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& why) {
  throw Error(Errc::invalid_argument, "config " + key + ": " + why);
}

// Typed readers that consume keys from an object so leftovers can be reported.
class Section {
 public:
  Section(const json& obj, std::string prefix) : prefix_(std::move(prefix)) {
    if (!obj.is_object()) fail(prefix_.empty() ? "<root>" : prefix_, "must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) items_.emplace(it.key(), it.value());
  }

  std::string key(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

  const json* take(const std::string& k) {
    auto it = items_.find(k);
    if (it == items_.end()) return nullptr;
    seen_.insert(k);
    return &it->second;
  }

  void number(const std::string& k, double& out) {
    const json* v = take(k);
    if (!v) return;
    if (v->is_string()) {
      const std::string s = v->get<std::string>();
      if (s == "inf" || s == "+inf" || s == "infinity") {
        out = kInfinity;
        return;
      }
    }
    if (!v->is_number()) fail(key(k), "expected a number");
    out = v->get<double>();
  }

  void integer(const std::string& k, int& out) {
    const json* v = take(k);
    if (!v) return;
    if (!v->is_number_integer()) fail(key(k), "expected an integer");
    const auto x = v->get<long long>();
    if (x < -(1LL << 31) || x > (1LL << 31) - 1) fail(key(k), "out of range");
    out = static_cast<int>(x);
  }

  void u64(const std::string& k, std::uint64_t& out) {
    const json* v = take(k);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      fail(key(k), "expected a non-negative integer");
    }
    out = v->get<std::uint64_t>();
  }

  std::optional<std::string> string(const std::string& k) {
    const json* v = take(k);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail(key(k), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& [k, v] : items_) {
      if (!seen_.count(k)) fail(key(k), "unknown key");
    }
  }

 private:
  std::string prefix_;
  std::map<std::string, json> items_;
  std::set<std::string> seen_;
};

// Validation messages from the library already name the field; prefix the
// section so the user sees the config key.
template <typename Fn>
void validate_section(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw Error(Errc::invalid_argument, "config " + section + ": " + e.what());
  }
}

PMode read_pmode(Section& s, const std::string& k, PMode current) {
  const auto v = s.string(k);
  if (!v) return current;
  try {
    return parse_pmode(*v);
  } catch (const Error& e) {
    fail(s.key(k), e.what());
  }
}

}  // namespace

Config resolve_config(const std::string& json_text, std::optional<PresetId> preset_override) {
  json doc;
  if (json_text.find_first_not_of(" \t\r\n") == std::string::npos) {
    doc = json::object();
  } else {
    try {
      doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw Error(Errc::invalid_argument, std::string("config is not valid JSON: ") + e.what());
    }
  }
  Section root(doc, "");
  Config cfg;
  if (const auto p = root.string("preset")) {
    try {
      cfg.preset = parse_preset(*p);
    } catch (const Error& e) {
      fail("preset", e.what());
    }
  }
  if (preset_override) cfg.preset = *preset_override;
  cfg.preset_info = resolve_preset(cfg.preset);
  cfg.energy = cfg.preset_info.params;
  // printed configs carry the preset's guidance steps; accept them back if they agree
  if (const json* gs = root.take("guidance_steps")) {
    std::vector<std::string> want;
    for (auto st : cfg.preset_info.steps) want.push_back(guidance_step_name(st));
    if (!gs->is_array() || *gs != json(want)) {
      fail("guidance_steps", std::string("must match the steps of preset ") + preset_name(cfg.preset));
    }
  }
  root.integer("threads", cfg.threads);
  if (cfg.threads < 1) fail("threads", "must be >= 1");

  if (const json* e = root.take("energy")) {
    Section s(*e, "energy");
    EnergyParams& p = cfg.energy;
    s.number("lambda_f", p.lambda_f);
    s.number("lambda_e", p.lambda_e);
    s.number("sigma_r", p.sigma_r);
    s.number("sigma_s", p.sigma_s);
    s.number("alpha", p.alpha);
    s.number("c1", p.c1);
    s.number("c2", p.c2);
    s.integer("h", p.h);
    s.number("p_large", p.p_large);
    s.number("p_small", p.p_small);
    s.number("eps", p.eps);
    s.number("response_scale", p.response_scale);
    s.integer("large_dilation", p.large_dilation);
    if (const auto nb = s.string("neighborhood")) {
      if (*nb == "four" || *nb == "4") p.neighborhood = Neighborhood::four;
      else if (*nb == "eight" || *nb == "8") p.neighborhood = Neighborhood::eight;
      else fail("energy.neighborhood", "expected \"four\" or \"eight\"");
    }
    s.finish();
  }
  validate_section("energy", [&] { cfg.energy.validate(); });
  cfg.preset_info.params = cfg.energy;

  if (const json* g = root.take("gd")) {
    Section s(*g, "gd");
    s.number("learning_rate", cfg.gd.learning_rate);
    s.number("beta1", cfg.gd.beta1);
    s.number("beta2", cfg.gd.beta2);
    s.number("adam_eps", cfg.gd.adam_eps);
    s.integer("iterations", cfg.gd.iterations);
    s.integer("pmap_refresh", cfg.gd.pmap_refresh);
    cfg.gd.p_mode = read_pmode(s, "p_mode", cfg.gd.p_mode);
    if (cfg.gd.p_mode == PMode::frozen) fail("gd.p_mode", "frozen maps cannot be given in a config file");
    s.finish();
  }
  validate_section("gd", [&] { cfg.gd.validate(); });

  if (const json* i = root.take("irls")) {
    Section s(*i, "irls");
    s.integer("outer_iterations", cfg.irls.outer_iterations);
    s.number("cg_tolerance", cfg.irls.cg_tolerance);
    s.integer("cg_max_iters", cfg.irls.cg_max_iters);
    cfg.irls.p_mode = read_pmode(s, "p_mode", cfg.irls.p_mode);
    if (cfg.irls.p_mode == PMode::frozen) fail("irls.p_mode", "frozen maps cannot be given in a config file");
    s.finish();
  }
  validate_section("irls", [&] { cfg.irls.validate(); });

  TrainConfig& t = cfg.train;
  t.preset = cfg.preset;
  if (const json* tr = root.take("train")) {
    Section s(*tr, "train");
    s.integer("epochs", t.epochs);
    s.integer("crop", t.crop);
    s.number("learning_rate", t.learning_rate);
    s.number("beta1", t.beta1);
    s.number("beta2", t.beta2);
    s.number("adam_eps", t.adam_eps);
    s.u64("seed", t.seed);
    s.integer("checkpoint_every", t.checkpoint_every);
    s.integer("overfit_steps", t.overfit_steps);
    s.number("norm_decay", t.norm_decay);
    if (const auto a = s.string("arch")) {
      try {
        t.arch = parse_architecture(*a);
      } catch (const Error& e) {
        fail("train.arch", e.what());
      }
    }
    if (const auto sc = s.string("schedule")) {
      if (*sc == "constant") t.schedule = TrainConfig::Schedule::constant;
      else if (*sc == "cosine") t.schedule = TrainConfig::Schedule::cosine;
      else fail("train.schedule", "expected \"constant\" or \"cosine\"");
    }
    t.p_mode = read_pmode(s, "p_mode", t.p_mode);
    s.finish();
  }
  t.params = cfg.energy;
  t.threads = cfg.threads;
  validate_section("train", [&] { t.validate(); });
  root.finish();
  return cfg;
}

Config load_config(const std::string& path, std::optional<PresetId> preset_override) {
  const auto bytes = read_file_bytes(path);
  return resolve_config(std::string(bytes.begin(), bytes.end()), preset_override);
}

std::string config_json(const Config& cfg, int indent) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["preset"] = preset_name(cfg.preset);
  j["threads"] = cfg.threads;
  const EnergyParams& e = cfg.energy;
  ojson en;
  en["lambda_f"] = e.lambda_f;
  en["lambda_e"] = e.lambda_e;
  en["sigma_r"] = e.sigma_r;
  en["sigma_s"] = e.sigma_s;
  en["alpha"] = e.alpha;
  en["c1"] = std::isinf(e.c1) ? ojson("inf") : ojson(e.c1);
  en["c2"] = e.c2;
  en["h"] = e.h;
  en["p_large"] = e.p_large;
  en["p_small"] = e.p_small;
  en["eps"] = e.eps;
  en["response_scale"] = e.response_scale;
  en["large_dilation"] = e.large_dilation;
  en["neighborhood"] = e.neighborhood == Neighborhood::four ? "four" : "eight";
  j["energy"] = en;
  auto steps = ojson::array();
  for (auto s : cfg.preset_info.steps) steps.push_back(guidance_step_name(s));
  j["guidance_steps"] = steps;
  ojson gd;
  gd["learning_rate"] = cfg.gd.learning_rate;
  gd["beta1"] = cfg.gd.beta1;
  gd["beta2"] = cfg.gd.beta2;
  gd["adam_eps"] = cfg.gd.adam_eps;
  gd["iterations"] = cfg.gd.iterations;
  gd["pmap_refresh"] = cfg.gd.pmap_refresh;
  gd["p_mode"] = pmode_name(cfg.gd.p_mode);
  j["gd"] = gd;
  ojson ir;
  ir["outer_iterations"] = cfg.irls.outer_iterations;
  ir["cg_tolerance"] = cfg.irls.cg_tolerance;
  ir["cg_max_iters"] = cfg.irls.cg_max_iters;
  ir["p_mode"] = pmode_name(cfg.irls.p_mode);
  j["irls"] = ir;
  const TrainConfig& t = cfg.train;
  ojson tr;
  tr["epochs"] = t.epochs;
  tr["crop"] = t.crop;
  tr["learning_rate"] = t.learning_rate;
  tr["beta1"] = t.beta1;
  tr["beta2"] = t.beta2;
  tr["adam_eps"] = t.adam_eps;
  tr["seed"] = t.seed;
  tr["arch"] = architecture_name(t.arch);
  tr["checkpoint_every"] = t.checkpoint_every;
  tr["overfit_steps"] = t.overfit_steps;
  tr["norm_decay"] = t.norm_decay;
  tr["schedule"] = t.schedule == TrainConfig::Schedule::cosine ? "cosine" : "constant";
  tr["p_mode"] = pmode_name(t.p_mode);
  j["train"] = tr;
  return j.dump(indent);
}

}  // namespace smoothlab
