#include "kdadv/config.hpp"

#include <fstream>
#include <set>

#include "kdadv/error.hpp"
#include "kdadv/hash.hpp"

namespace kdadv {

using nlohmann::json;

void RunConfig::validate() const {
  if (data.source == DataConfig::Source::kSynthetic) {
    if (data.blobs.num_classes < 2) throw ConfigError("synthetic data needs at least two classes");
    if (data.blobs.n_per_class < 1 || data.synthetic_test_per_class < 1) throw ConfigError("synthetic class sizes must be positive");
    if (data.blobs.image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
  }
  if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0,1)");
  schedule.validate();
  if (lr_grid.empty()) throw ConfigError("lr_grid is empty");
  for (double lr : lr_grid) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  kd.validate();
  if (strategy_grid.empty() || alpha_grid.empty() || tau_grid.empty()) throw ConfigError("ablation grids must be non-empty");
  for (double a : alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha grid values must be in [0,1]");
  }
  for (double t : tau_grid) {
    if (!(t > 0.0)) throw ConfigError("tau grid values must be positive");
  }
  if (attacks.empty()) throw ConfigError("attack list is empty");
  if (pgd_iterations < 1) throw ConfigError("pgd_iterations must be at least 1");
  if (attack_batch == 0) throw ConfigError("attack batch size must be positive");
  if (!(rmsd_budget > 0.0) || !(rmsd_tolerance > 0.0)) throw ConfigError("RMSD budget and tolerance must be positive");
  if (!(calibration_tolerance > 0.0 && calibration_tolerance <= rmsd_tolerance)) {
    throw ConfigError("calibration_tolerance must be in (0, rmsd_tolerance]");
  }
  if (calibration_images == 0) throw ConfigError("calibration_images must be positive");
  if (slice_ranges.empty()) throw ConfigError("boundary ranges are empty");
  for (double r : slice_ranges) {
    if (!(r > 0.0)) throw ConfigError("boundary ranges must be positive");
  }
  if (slice_resolution < 2) throw ConfigError("boundary resolution must be at least 2");
}

RunConfig default_config() {
  RunConfig c;
  c.data.cifar_dir = "data/cifar-10-batches-bin";
  return c;
}

RunConfig fast_config() {
  RunConfig c;
  c.data.source = DataConfig::Source::kSynthetic;
  c.data.blobs.num_classes = 10;
  c.data.blobs.n_per_class = 160;
  c.data.blobs.image_size = 16;
  c.data.blobs.noise_std = 40.0;
  c.data.blobs.separation = 260.0;
  c.data.blobs.jitter = 4;
  c.data.blobs.bumps = 12;
  c.data.blobs.bump_width = 0.05;
  c.data.synthetic_test_per_class = 30;
  c.out_dir = "runs/fast";
  c.zoo_scale = ZooScale::kTiny;
  c.schedule.max_epochs = 10;
  c.schedule.warmup_epochs = 2;
  c.schedule.batch_size = 64;
  c.lr_grid = {1e-2};
  c.kd.switch_period = 2;
  c.kd.seeds = {0};
  c.pgd_iterations = 10;
  c.calibration_images = 100;
  c.slice_resolution = 41;
  return c;
}

namespace {

std::string source_name(DataConfig::Source s) { return s == DataConfig::Source::kCifar10 ? "cifar10" : "synthetic"; }

DataConfig::Source parse_source(const std::string& s) {
  if (s == "cifar10") return DataConfig::Source::kCifar10;
  if (s == "synthetic") return DataConfig::Source::kSynthetic;
  throw ConfigError("unknown data source '" + s + "' (cifar10|synthetic)");
}

json data_json(const DataConfig& d) {
  const auto& b = d.blobs;
  return {{"source", source_name(d.source)},
          {"cifar_dir", d.cifar_dir.string()},
          {"synthetic",
           {{"num_classes", b.num_classes},
            {"train_per_class", b.n_per_class},
            {"test_per_class", d.synthetic_test_per_class},
            {"image_size", b.image_size},
            {"seed", b.seed},
            {"noise_std", b.noise_std},
            {"separation", b.separation},
            {"jitter", b.jitter},
            {"bumps", b.bumps},
            {"bump_width", b.bump_width}}},
          {"val_fraction", d.val_fraction},
          {"split_seed", d.split_seed},
          {"train_limit", d.train_limit},
          {"test_limit", d.test_limit}};
}

json schedule_json(const RunConfig& c) {
  const auto& s = c.schedule;
  return {{"max_epochs", s.max_epochs},         {"warmup_epochs", s.warmup_epochs},
          {"patience", s.patience},             {"plateau_tolerance", s.plateau_tolerance},
          {"batch_size", s.batch_size},         {"weight_decay", s.weight_decay},
          {"lr_grid", c.lr_grid}};
}

json names(const auto& values, auto namer) {
  json arr = json::array();
  for (const auto& v : values) arr.push_back(std::string(namer(v)));
  return arr;
}

json kd_json(const KDConfig& k) {
  return {{"strategy", strategy_name(k.strategy)}, {"alpha", k.alpha},
          {"tau", k.tau},                          {"switch_period", k.switch_period},
          {"scale_soft_by_tau2", k.scale_soft_by_tau2}, {"seeds", k.seeds}};
}

json attack_json(const RunConfig& c) {
  return {{"kinds", names(c.attacks, attack_name)},
          {"pgd_iterations", c.pgd_iterations},
          {"batch_size", c.attack_batch},
          {"warmup_batch", c.warmup_batch},
          {"ensemble_mode", ensemble_mode_name(c.ensemble_mode)},
          {"rmsd_budget", c.rmsd_budget},
          {"rmsd_tolerance", c.rmsd_tolerance},
          {"calibration_tolerance", c.calibration_tolerance},
          {"calibration_images", c.calibration_images}};
}

// Strict section reader: every key must be known, and values keep their
// defaults when absent.
class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> known) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    for (const auto& [k, _] : j_.items()) {
      if (!known.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
    }
  }
  template <class T>
  void get(const std::string& key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + path_ + "." + key + ": " + e.what());
    }
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string path_;
};

template <class T, class Parse>
void get_enum_list(const Section& s, const std::string& key, std::vector<T>& out, Parse parse) {
  std::vector<std::string> raw;
  if (!s.has(key)) return;
  s.get(key, raw);
  out.clear();
  for (const auto& r : raw) out.push_back(parse(r));
}

std::string digest(const json& j) { return to_hex(fnv1a(j.dump())); }

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["data"] = data_json(c.data);
  j["out_dir"] = c.out_dir.string();
  j["models"] = {{"scale", zoo_scale_name(c.zoo_scale)}, {"seed", c.model_seed}};
  j["training"] = schedule_json(c);
  j["distillation"] = kd_json(c.kd);
  j["distillation"]["strategy_grid"] = names(c.strategy_grid, strategy_name);
  j["distillation"]["alpha_grid"] = c.alpha_grid;
  j["distillation"]["tau_grid"] = c.tau_grid;
  j["attacks"] = attack_json(c);
  j["evaluation"] = {{"asr_mode", asr_mode_name(c.asr_mode)}};
  j["boundary"] = {{"image_index", c.slice_image},
                   {"seed", c.slice_seed},
                   {"ranges", c.slice_ranges},
                   {"resolution", c.slice_resolution}};
  j["serial"] = c.serial;
  return j;
}

RunConfig config_from_json(const json& j, const RunConfig& base) {
  RunConfig c = base;
  const Section top(j, "config",
                    {"data", "out_dir", "models", "training", "distillation", "attacks", "evaluation", "boundary", "serial"});
  if (top.has("data")) {
    const Section d(top.at("data"), "data",
                    {"source", "cifar_dir", "synthetic", "val_fraction", "split_seed", "train_limit", "test_limit"});
    std::string src = source_name(c.data.source), dir = c.data.cifar_dir.string();
    d.get("source", src);
    c.data.source = parse_source(src);
    d.get("cifar_dir", dir);
    c.data.cifar_dir = dir;
    d.get("val_fraction", c.data.val_fraction);
    d.get("split_seed", c.data.split_seed);
    d.get("train_limit", c.data.train_limit);
    d.get("test_limit", c.data.test_limit);
    if (d.has("synthetic")) {
      const Section s(d.at("synthetic"), "data.synthetic",
                      {"num_classes", "train_per_class", "test_per_class", "image_size", "seed", "noise_std",
                       "separation", "jitter", "bumps", "bump_width"});
      auto& b = c.data.blobs;
      s.get("num_classes", b.num_classes);
      s.get("train_per_class", b.n_per_class);
      s.get("test_per_class", c.data.synthetic_test_per_class);
      s.get("image_size", b.image_size);
      s.get("seed", b.seed);
      s.get("noise_std", b.noise_std);
      s.get("separation", b.separation);
      s.get("jitter", b.jitter);
      s.get("bumps", b.bumps);
      s.get("bump_width", b.bump_width);
    }
  }
  if (top.has("out_dir")) {
    std::string o;
    top.get("out_dir", o);
    c.out_dir = o;
  }
  if (top.has("models")) {
    const Section m(top.at("models"), "models", {"scale", "seed"});
    std::string scale = std::string(zoo_scale_name(c.zoo_scale));
    m.get("scale", scale);
    try {
      c.zoo_scale = parse_zoo_scale(scale);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    m.get("seed", c.model_seed);
  }
  if (top.has("training")) {
    const Section t(top.at("training"), "training",
                    {"max_epochs", "warmup_epochs", "patience", "plateau_tolerance", "batch_size", "weight_decay",
                     "lr_grid"});
    t.get("max_epochs", c.schedule.max_epochs);
    t.get("warmup_epochs", c.schedule.warmup_epochs);
    t.get("patience", c.schedule.patience);
    t.get("plateau_tolerance", c.schedule.plateau_tolerance);
    t.get("batch_size", c.schedule.batch_size);
    t.get("weight_decay", c.schedule.weight_decay);
    t.get("lr_grid", c.lr_grid);
  }
  if (top.has("distillation")) {
    const Section k(top.at("distillation"), "distillation",
                    {"strategy", "alpha", "tau", "switch_period", "scale_soft_by_tau2", "seeds", "strategy_grid",
                     "alpha_grid", "tau_grid"});
    std::string strategy = std::string(strategy_name(c.kd.strategy));
    k.get("strategy", strategy);
    c.kd.strategy = parse_strategy(strategy);
    k.get("alpha", c.kd.alpha);
    k.get("tau", c.kd.tau);
    k.get("switch_period", c.kd.switch_period);
    k.get("scale_soft_by_tau2", c.kd.scale_soft_by_tau2);
    k.get("seeds", c.kd.seeds);
    get_enum_list(k, "strategy_grid", c.strategy_grid, [](const std::string& s) { return parse_strategy(s); });
    k.get("alpha_grid", c.alpha_grid);
    k.get("tau_grid", c.tau_grid);
  }
  if (top.has("attacks")) {
    const Section a(top.at("attacks"), "attacks",
                    {"kinds", "pgd_iterations", "batch_size", "warmup_batch", "ensemble_mode", "rmsd_budget",
                     "rmsd_tolerance", "calibration_tolerance", "calibration_images"});
    get_enum_list(a, "kinds", c.attacks, [](const std::string& s) { return parse_attack(s); });
    a.get("pgd_iterations", c.pgd_iterations);
    a.get("batch_size", c.attack_batch);
    a.get("warmup_batch", c.warmup_batch);
    std::string mode = std::string(ensemble_mode_name(c.ensemble_mode));
    a.get("ensemble_mode", mode);
    c.ensemble_mode = parse_ensemble_mode(mode);
    a.get("rmsd_budget", c.rmsd_budget);
    a.get("rmsd_tolerance", c.rmsd_tolerance);
    a.get("calibration_tolerance", c.calibration_tolerance);
    a.get("calibration_images", c.calibration_images);
  }
  if (top.has("evaluation")) {
    const Section e(top.at("evaluation"), "evaluation", {"asr_mode"});
    std::string mode = std::string(asr_mode_name(c.asr_mode));
    e.get("asr_mode", mode);
    c.asr_mode = parse_asr_mode(mode);
  }
  if (top.has("boundary")) {
    const Section b(top.at("boundary"), "boundary", {"image_index", "seed", "ranges", "resolution"});
    b.get("image_index", c.slice_image);
    b.get("seed", c.slice_seed);
    b.get("ranges", c.slice_ranges);
    b.get("resolution", c.slice_resolution);
  }
  top.get("serial", c.serial);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, base);
}

std::string data_hash(const RunConfig& c) {
  json d = data_json(c.data);
  // Only the active source's settings matter.
  if (c.data.source == DataConfig::Source::kCifar10) {
    d.erase("synthetic");
  } else {
    d.erase("cifar_dir");
  }
  return digest(d);
}

std::string supervised_hash(const RunConfig& c, Role role) {
  return digest({{"data", data_hash(c)},
                 {"training", schedule_json(c)},
                 {"scale", zoo_scale_name(c.zoo_scale)},
                 {"seed", c.model_seed},
                 {"role", role_name(role)}});
}

std::string student_hash(const RunConfig& c, const KDConfig& kd) {
  return digest({{"teachers",
                  {supervised_hash(c, Role::kTeacherResidual), supervised_hash(c, Role::kTeacherDense)}},
                 {"student", supervised_hash(c, Role::kStudentPlain)},
                 {"kd", kd_json(kd)}});
}

std::string attack_hash(const RunConfig& c) {
  json a = attack_json(c);
  a.erase("warmup_batch");
  a.erase("batch_size");
  return digest({{"data", data_hash(c)}, {"attacks", a}});
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out_dir");
  j.erase("serial");
  return digest(j);
}

}  // namespace kdadv
