#include "kdadv/pipeline.hpp"

#include <cstdio>
#include <deque>
#include <fstream>
#include <map>

#include "kdadv/checkpoint.hpp"
#include "kdadv/error.hpp"
#include "kdadv/hash.hpp"
#include "kdadv/zoo.hpp"

namespace kdadv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact(p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + p.string());
}

std::optional<json> read_if_exists(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return read_json_file(p);
}

json normalization_json(const Normalization& n) { return {{"mean", n.mean}, {"stddev", n.stddev}}; }

Normalization normalization_from(const json& j) {
  return {j.at("mean").get<std::vector<float>>(), j.at("stddev").get<std::vector<float>>()};
}

constexpr Role kSupervised[] = {Role::kBlackboxMultibranch, Role::kTeacherResidual, Role::kTeacherDense};

std::uint64_t role_offset(Role r) {
  switch (r) {
    case Role::kTeacherResidual: return 1;
    case Role::kTeacherDense: return 2;
    case Role::kStudentPlain: return 3;
    case Role::kBlackboxMultibranch: return 4;
  }
  return 0;
}

}  // namespace

std::string model_id(Role role) {
  if (role == Role::kBlackboxMultibranch) return kBlackboxId;
  return std::string(role_name(role));
}

std::string student_id(const KDConfig& kd) {
  return "student-" + std::string(strategy_name(kd.strategy)) + "-a" + short_number(kd.alpha) + "-t" +
         short_number(kd.tau);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IngestionError*>(&e)) return 2;
  if (dynamic_cast<const DivergenceError*>(&e)) return 3;
  if (dynamic_cast<const CalibrationError*>(&e)) return 4;
  if (dynamic_cast<const MissingArtifact*>(&e)) return 5;
  if (dynamic_cast<const ConfigError*>(&e)) return 6;
  return 1;
}

Pipeline::Pipeline(RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) { config_.validate(); }

// ---------------------------------------------------------------------------
// Data

const PreparedData& Pipeline::prepare() {
  const fs::path d = dir("data");
  const std::string hash = data_hash(config_);
  if (const auto meta = read_if_exists(d / "data.json"); meta && meta->value("hash", "") == hash) {
    try {
      data();
      data_->cache_hit = true;
      log_ << "prepare: cache hit (" << hash << ")\n";
      return *data_;
    } catch (const Error& e) {
      log_ << "prepare: cached data unusable (" << e.what() << "), rebuilding\n";
    }
  }

  const auto& dc = config_.data;
  Dataset pool, test;
  json source;
  if (dc.source == DataConfig::Source::kSynthetic) {
    pool = synthetic_blobs(dc.blobs, Split::kTrain);
    BlobOptions t = dc.blobs;
    t.n_per_class = dc.synthetic_test_per_class;
    test = synthetic_blobs(t, Split::kTest);
    source = to_json(config_)["data"]["synthetic"];
    source["generator"] = "class-conditional gaussian blobs";
  } else {
    auto splits = load_cifar10(dc.cifar_dir);
    pool = std::move(splits.train);
    test = std::move(splits.test);
    source = {{"cifar_dir", dc.cifar_dir.string()}};
  }
  if (dc.train_limit > 0 && dc.train_limit < pool.size()) pool = pool.head(dc.train_limit);
  if (dc.test_limit > 0 && dc.test_limit < test.size()) test = test.head(dc.test_limit);
  auto [train, val] = train_val_split(pool, dc.val_fraction, dc.split_seed);

  PreparedData p{std::move(train), std::move(val), std::move(test), {}, false};
  p.normalization = channel_statistics(p.train);
  write_cifar_records(p.train, d / "train.bin");
  write_cifar_records(p.val, d / "val.bin");
  write_cifar_records(p.test, d / "test.bin");
  write_json_file(d / "data.json",
                  {{"hash", hash},
                   {"source", source},
                   {"image_shape", p.train.image_shape()},
                   {"num_classes", p.train.num_classes()},
                   {"sizes", {{"train", p.train.size()}, {"val", p.val.size()}, {"test", p.test.size()}}},
                   {"content_hash",
                    {{"train", to_hex(p.train.content_hash())},
                     {"val", to_hex(p.val.content_hash())},
                     {"test", to_hex(p.test.content_hash())}}},
                   {"normalization", normalization_json(p.normalization)}});
  log_ << "prepare: " << p.train.size() << " train / " << p.val.size() << " val / " << p.test.size()
       << " test images written to " << d.string() << "\n";
  data_ = std::move(p);
  return *data_;
}

const PreparedData& Pipeline::data() {
  if (data_) return *data_;
  const fs::path d = dir("data");
  const auto meta = read_if_exists(d / "data.json");
  if (!meta) throw MissingArtifact("prepared data in " + d.string() + " (run prepare)");
  if (meta->value("hash", "") != data_hash(config_)) {
    throw MissingArtifact("prepared data in " + d.string() + " belongs to a different configuration (run prepare)");
  }
  const Shape shape = meta->at("image_shape").get<Shape>();
  const int classes = meta->at("num_classes").get<int>();
  PreparedData p;
  p.train = read_cifar_records(d / "train.bin", Split::kTrain, shape, classes);
  p.val = read_cifar_records(d / "val.bin", Split::kVal, shape, classes);
  p.test = read_cifar_records(d / "test.bin", Split::kTest, shape, classes);
  const auto& ch = meta->at("content_hash");
  for (const auto& [name, ds] : {std::pair{"train", &p.train}, {"val", &p.val}, {"test", &p.test}}) {
    if (ch.at(name).get<std::string>() != to_hex(ds->content_hash())) {
      throw FormatError(std::string(name) + " split in " + d.string() + " does not match its recorded content hash");
    }
  }
  p.normalization = normalization_from(meta->at("normalization"));
  data_ = std::move(p);
  return *data_;
}

// ---------------------------------------------------------------------------
// Training

namespace {

EpochCallback epoch_logger(std::ostream& log, const std::string& id) {
  return [&log, id](const EpochRecord& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "  %s epoch %3d  loss %.4f  val_loss %.4f  val_acc %.4f  lr %.2e", id.c_str(),
                  r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr);
    log << buf;
    if (r.teacher_index >= 0) log << "  teacher " << r.teacher_index;
    log << '\n' << std::flush;
  };
}

struct Candidate {
  std::optional<TrainResult> best;
  double lr = 0.0;
};

void save_trained(const fs::path& models, const std::string& id, const TrainResult& r, double lr,
                  const std::string& hash, const std::string& cfg_hash) {
  save_checkpoint(r.model, models / (id + ".ckpt"));
  r.history.write_csv(models / (id + ".history.csv"));
  json seeds = json::array();
  for (const auto& [s, acc] : r.seed_val_acc) seeds.push_back({{"seed", s}, {"val_acc", acc}});
  write_json_file(models / (id + ".json"), {{"id", id},
                                            {"hash", hash},
                                            {"config_hash", cfg_hash},
                                            {"seed", r.seed},
                                            {"lr", lr},
                                            {"best_val_acc", r.best_val_acc},
                                            {"best_epoch", r.best_epoch},
                                            {"epochs_run", r.history.epochs.size()},
                                            {"stopped_early", r.history.stopped_early},
                                            {"seeds", seeds},
                                            {"parameters", r.model.parameter_count()}});
}

}  // namespace

bool Pipeline::train(Role role) {
  if (role == Role::kStudentPlain) throw ConfigError("students are trained from a distillation configuration");
  const std::string id = model_id(role);
  const std::string hash = supervised_hash(config_, role);
  const fs::path models = dir("models");
  if (const auto meta = read_if_exists(models / (id + ".json"));
      meta && meta->value("hash", "") == hash && fs::exists(models / (id + ".ckpt"))) {
    log_ << "train " << id << ": up to date\n";
    return false;
  }
  const PreparedData& d = data();
  const std::uint64_t seed = config_.model_seed + role_offset(role);
  Candidate c;
  for (double lr : config_.lr_grid) {
    Model m = build(role, seed, config_.zoo_scale, d.train.num_classes(), static_cast<int>(d.train.image_shape()[1]));
    m.set_normalization(d.normalization);
    TrainSchedule s = config_.schedule;
    s.max_lr = lr;
    log_ << "train " << id << ": lr " << lr << ", " << m.parameter_count() << " parameters\n";
    try {
      TrainResult r = train_supervised(std::move(m), d.train, d.val, s, seed, epoch_logger(log_, id));
      r.seed = seed;
      if (!c.best || r.best_val_acc > c.best->best_val_acc) {
        c.best = std::move(r);
        c.lr = lr;
      }
    } catch (const TrainingDiverged& e) {
      fs::create_directories(models);
      e.history().write_csv(models / (id + ".history.csv"));
      throw;
    }
  }
  save_trained(models, id, *c.best, c.lr, hash, config_hash(config_));
  log_ << "train " << id << ": best val_acc " << c.best->best_val_acc << " at lr " << c.lr << "\n";
  return true;
}

bool Pipeline::train(const KDConfig& kd) { return train_as(kd, student_id(kd)); }

bool Pipeline::train_as(const KDConfig& kd, const std::string& id) {
  kd.validate();
  const std::string hash = student_hash(config_, kd);
  const fs::path models = dir("models");
  if (const auto meta = read_if_exists(models / (id + ".json"));
      meta && meta->value("hash", "") == hash && fs::exists(models / (id + ".ckpt"))) {
    log_ << "train " << id << ": up to date\n";
    return false;
  }
  const PreparedData& d = data();
  const Model t1 = load(model_id(Role::kTeacherResidual));
  const Model t2 = load(model_id(Role::kTeacherDense));
  const std::vector<const Classifier*> teachers = {&t1, &t2};
  Model student = build(Role::kStudentPlain, 0, config_.zoo_scale, d.train.num_classes(),
                        static_cast<int>(d.train.image_shape()[1]));
  student.set_normalization(d.normalization);
  Candidate c;
  for (double lr : config_.lr_grid) {
    TrainSchedule s = config_.schedule;
    s.max_lr = lr;
    log_ << "train " << id << ": lr " << lr << ", seeds " << kd.seeds.size() << "\n";
    try {
      TrainResult r = train_student(kd, teachers, student, d.train, d.val, s, epoch_logger(log_, id));
      if (!c.best || r.best_val_acc > c.best->best_val_acc) {
        c.best = std::move(r);
        c.lr = lr;
      }
    } catch (const TrainingDiverged& e) {
      fs::create_directories(models);
      e.history().write_csv(models / (id + ".history.csv"));
      throw;
    }
  }
  save_trained(models, id, *c.best, c.lr, hash, config_hash(config_));
  log_ << "train " << id << ": best val_acc " << c.best->best_val_acc << " (seed " << c.best->seed << ", lr " << c.lr
       << ")\n";
  return true;
}

KDConfig Pipeline::matrix_student(Strategy s) const {
  KDConfig k = config_.kd;
  k.strategy = s;
  return k;
}

void Pipeline::train_all() {
  for (Role r : kSupervised) train(r);
  for (Strategy s : {Strategy::kCurriculum, Strategy::kJoint}) train(matrix_student(s));
}

void Pipeline::train_grid() {
  for (Role r : {Role::kTeacherResidual, Role::kTeacherDense}) train(r);
  for (const auto& [id, k] : grid_students()) train_as(k, id);
}

// One student per grid point and seed.
std::vector<std::pair<std::string, KDConfig>> Pipeline::grid_students() const {
  std::vector<std::pair<std::string, KDConfig>> out;
  for (Strategy s : config_.strategy_grid) {
    for (double a : config_.alpha_grid) {
      for (double t : config_.tau_grid) {
        for (std::uint64_t seed : config_.kd.seeds) {
          KDConfig k = config_.kd;
          k.strategy = s;
          k.alpha = a;
          k.tau = t;
          k.seeds = {seed};
          out.emplace_back(student_id(k) + "-s" + std::to_string(seed), k);
        }
      }
    }
  }
  return out;
}

std::string Pipeline::model_hash(const std::string& id) const {
  for (Role r : kSupervised) {
    if (model_id(r) == id) return supervised_hash(config_, r);
  }
  if (id == kEnsembleId) {
    return to_hex(fnv1a(supervised_hash(config_, Role::kTeacherResidual) + supervised_hash(config_, Role::kTeacherDense) +
                        std::string(ensemble_mode_name(config_.ensemble_mode))));
  }
  const fs::path meta = dir("models") / (id + ".json");
  // Students: the recorded hash must match one the current configuration could produce.
  for (Strategy st : {Strategy::kCurriculum, Strategy::kJoint}) {
    const KDConfig k = matrix_student(st);
    if (student_id(k) == id) return student_hash(config_, k);
  }
  for (const auto& [gid, k] : grid_students()) {
    if (gid == id) return student_hash(config_, k);
  }
  throw ConfigError("unknown model id '" + id + "'");
}

Model Pipeline::load(const std::string& id) const {
  const fs::path models = dir("models");
  const auto meta = read_if_exists(models / (id + ".json"));
  if (!meta || !fs::exists(models / (id + ".ckpt"))) throw MissingArtifact("checkpoint for " + id + " (run train)");
  if (meta->value("hash", "") != model_hash(id)) {
    throw MissingArtifact("checkpoint for " + id + " was trained under a different configuration (run train)");
  }
  return load_checkpoint(models / (id + ".ckpt"));
}

// ---------------------------------------------------------------------------
// Attacks and evaluation

struct Pipeline::Loaded {
  std::deque<Model> models;
  std::deque<Renamed> renamed;
  std::unique_ptr<Ensemble> ensemble;
  std::map<std::string, const Classifier*> by_id;
};

std::unique_ptr<Pipeline::Loaded> Pipeline::load_attackers(const std::vector<std::string>& ids) const {
  auto l = std::make_unique<Loaded>();
  const auto get = [&](const std::string& id) -> const Classifier* {
    if (auto it = l->by_id.find(id); it != l->by_id.end()) return it->second;
    if (id == kEnsembleId) {
      const Classifier* a = nullptr;
      const Classifier* b = nullptr;
      for (const auto& t : {model_id(Role::kTeacherResidual), model_id(Role::kTeacherDense)}) {
        if (!l->by_id.count(t)) {
          l->models.push_back(load(t));
          l->by_id[t] = &l->models.back();
        }
      }
      a = l->by_id[model_id(Role::kTeacherResidual)];
      b = l->by_id[model_id(Role::kTeacherDense)];
      l->ensemble = std::make_unique<Ensemble>(kEnsembleId, std::vector<const Classifier*>{a, b}, config_.ensemble_mode);
      return l->by_id[id] = l->ensemble.get();
    }
    l->models.push_back(load(id));
    const Classifier* c = &l->models.back();
    if (c->name() != id) {
      l->renamed.emplace_back(*c, id);
      c = &l->renamed.back();
    }
    return l->by_id[id] = c;
  };
  for (const auto& id : ids) get(id);
  return l;
}

std::vector<std::string> Pipeline::attacker_ids() const {
  return {kBlackboxId,
          model_id(Role::kTeacherResidual),
          model_id(Role::kTeacherDense),
          kEnsembleId,
          student_id(matrix_student(Strategy::kCurriculum)),
          student_id(matrix_student(Strategy::kJoint))};
}

fs::path Pipeline::archive_path(const std::string& attacker, AttackKind kind) const {
  return dir("attacks") / (attacker + "_" + std::string(attack_name(kind)) + ".bin");
}

namespace {

std::string archive_hash(const RunConfig& c, const std::string& model_hash) {
  return to_hex(fnv1a(attack_hash(c) + model_hash));
}

}  // namespace

std::optional<double> Pipeline::archived_epsilon(const std::string& attacker, AttackKind kind) const {
  auto meta_path = archive_path(attacker, kind);
  meta_path.replace_extension(".json");
  const auto meta = read_if_exists(meta_path);
  if (!meta || meta->value("hash", "") != archive_hash(config_, model_hash(attacker))) return std::nullopt;
  if (meta->value("epsilon_source", "") != "calibrated") return std::nullopt;
  return meta->at("epsilon").get<double>();
}

void Pipeline::write_archive(const std::string& attacker, const AttackOutput& out, const json& extra) const {
  json meta = extra;
  meta["hash"] = archive_hash(config_, model_hash(attacker));
  meta["config_hash"] = config_hash(config_);
  meta["attacker_id"] = attacker;
  write_attack_archive(out, data_->test, archive_path(attacker, out.spec.kind), meta);
}

Pipeline::AttackResult Pipeline::attack(const std::string& attacker, AttackKind kind, std::optional<double> epsilon) {
  const PreparedData& d = data();
  auto meta_path = archive_path(attacker, kind);
  meta_path.replace_extension(".json");
  const std::string hash = archive_hash(config_, model_hash(attacker));
  if (const auto meta = read_if_exists(meta_path); meta && meta->value("hash", "") == hash &&
                                                   fs::exists(archive_path(attacker, kind)) &&
                                                   (!epsilon || meta->value("epsilon", -1.0) == *epsilon)) {
    log_ << "attack " << attacker << " " << attack_name(kind) << ": up to date\n";
    return {*meta, true};
  }
  const auto loaded = load_attackers({attacker});
  const Classifier& model = *loaded->by_id.at(attacker);
  AttackSpec spec;
  spec.kind = kind;
  spec.iterations = config_.pgd_iterations;
  json extra;
  if (epsilon) {
    spec.epsilon = *epsilon;
    extra["epsilon_source"] = "given";
  } else {
    const Dataset calib = d.test.head(std::min(d.test.size(), config_.calibration_images));
    const auto cal = calibrate_epsilon(spec, model, calib.all_images(), calib.labels(),
                                       {.target_rmsd = config_.rmsd_budget, .tolerance = config_.calibration_tolerance});
    spec.epsilon = cal.epsilon;
    extra["epsilon_source"] = "calibrated";
    extra["calibration"] = {{"images", calib.size()},
                            {"achieved_rmsd", cal.achieved_rmsd},
                            {"evaluations", cal.evaluations},
                            {"bracket", {cal.bracket_lo, cal.bracket_hi}}};
  }
  const AttackOutput out =
      generate(model, d.test, spec, {.batch_size = config_.attack_batch, .warmup_batch = config_.warmup_batch});
  write_archive(attacker, out, extra);
  log_ << "attack " << attacker << " " << attack_name(kind) << ": epsilon " << spec.epsilon << ", mean RMSD "
       << out.mean_rmsd << ", " << out.seconds << " s\n";
  return {read_json_file(meta_path), false};
}

EvalReport Pipeline::evaluate() {
  const PreparedData& d = data();
  const auto ids = attacker_ids();
  const auto loaded = load_attackers(ids);
  std::vector<Attacker> attackers;
  for (const auto& id : ids) {
    Attacker a{loaded->by_id.at(id), AttackerType::kBaseline, std::nullopt};
    if (id == kBlackboxId) a.type = AttackerType::kSelf;
    if (id == kEnsembleId) a.type = AttackerType::kEnsemble;
    for (Strategy s : {Strategy::kCurriculum, Strategy::kJoint}) {
      const KDConfig k = matrix_student(s);
      if (id == student_id(k)) {
        a.type = AttackerType::kStudent;
        const auto meta = read_json_file(dir("models") / (id + ".json"));
        a.kd = KDParams{k.strategy, k.alpha, k.tau, meta.at("seed").get<std::uint64_t>()};
      }
    }
    attackers.push_back(a);
  }
  const Classifier& target = *loaded->by_id.at(kBlackboxId);

  MatrixOptions o;
  o.attacks = config_.attacks;
  o.pgd_iterations = config_.pgd_iterations;
  o.calibration = {.target_rmsd = config_.rmsd_budget, .tolerance = config_.calibration_tolerance};
  o.calibration_images = config_.calibration_images;
  o.generation = {.batch_size = config_.attack_batch, .warmup_batch = config_.warmup_batch};
  o.asr_mode = config_.asr_mode;
  o.config_hash = config_hash(config_);
  o.partial_report = dir("reports") / "matrix.partial.csv";
  o.known_epsilon = [this](const std::string& id, AttackKind k) { return archived_epsilon(id, k); };
  o.on_output = [this](const Attacker& a, const AttackOutput& out) {
    if (!archived_epsilon(a.model->name(), out.spec.kind)) {
      write_archive(a.model->name(), out, {{"epsilon_source", "calibrated"}});
    }
  };
  log_ << "evaluate: " << attackers.size() << " attackers x " << o.attacks.size() << " attacks against "
       << target.name() << " on " << d.test.size() << " test images\n";
  EvalReport r = run_matrix(attackers, target, d.test, o);
  write_report(r, dir("reports") / "matrix.csv", ReportFormat::kCsv);
  write_report(r, dir("reports") / "matrix.json", ReportFormat::kJson);
  fs::remove(*o.partial_report);
  fs::remove(fs::path(*o.partial_report).replace_extension(".meta.json"));
  log_ << format_report_table(r);
  return r;
}

AblationReport Pipeline::ablate() {
  const PreparedData& d = data();
  const auto grid = grid_students();
  std::vector<std::string> ids;
  for (const auto& [id, k] : grid) ids.push_back(id);
  ids.push_back(kBlackboxId);
  const auto loaded = load_attackers(ids);
  std::vector<Attacker> students;
  for (const auto& [id, k] : grid) {
    students.push_back({loaded->by_id.at(id), AttackerType::kStudent, KDParams{k.strategy, k.alpha, k.tau, k.seeds.front()}});
  }
  MatrixOptions o;
  o.attacks = {AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd};
  o.pgd_iterations = config_.pgd_iterations;
  o.calibration = {.target_rmsd = config_.rmsd_budget, .tolerance = config_.calibration_tolerance};
  o.calibration_images = config_.calibration_images;
  o.generation = {.batch_size = config_.attack_batch, .warmup_batch = config_.warmup_batch};
  o.asr_mode = config_.asr_mode;
  o.config_hash = config_hash(config_);
  o.partial_report = dir("reports") / "ablation.partial.csv";
  o.known_epsilon = [this](const std::string& id, AttackKind k) { return archived_epsilon(id, k); };
  o.on_output = [this](const Attacker& a, const AttackOutput& out) {
    if (!archived_epsilon(a.model->name(), out.spec.kind)) {
      write_archive(a.model->name(), out, {{"epsilon_source", "calibrated"}});
    }
  };
  log_ << "ablate: " << students.size() << " students on " << d.test.size() << " test images\n";
  const AblationReport r = run_ablation(students, *loaded->by_id.at(kBlackboxId), d.test, o);
  write_ablation(r, dir("reports") / "ablation.csv", ReportFormat::kCsv);
  write_ablation(r, dir("reports") / "ablation.json", ReportFormat::kJson);
  fs::remove(*o.partial_report);
  fs::remove(fs::path(*o.partial_report).replace_extension(".meta.json"));
  log_ << format_ablation_table(r);
  return r;
}

std::vector<fs::path> Pipeline::slice(std::optional<std::size_t> image_index) {
  const PreparedData& d = data();
  const std::size_t idx = image_index.value_or(config_.slice_image);
  if (idx >= d.test.size()) {
    throw ConfigError("slice image " + std::to_string(idx) + " out of range (test set has " +
                      std::to_string(d.test.size()) + ")");
  }
  const auto ids = attacker_ids();
  const auto loaded = load_attackers(ids);
  std::vector<const Classifier*> models;
  for (const auto& id : ids) models.push_back(loaded->by_id.at(id));

  const Tensor x = d.test.images(idx, idx + 1);
  const int label = d.test.labels()[idx];
  const auto dirs = slice_directions(*loaded->by_id.at(kBlackboxId), x, label, config_.slice_seed);
  const fs::path out = dir("slices");
  std::vector<fs::path> written;
  json meta = {{"image_index", idx},
               {"label", label},
               {"seed", config_.slice_seed},
               {"resolution", config_.slice_resolution},
               {"config_hash", config_hash(config_)},
               {"direction_source", kBlackboxId},
               {"clean_predictions", json::object()}};
  for (const Classifier* m : models) meta["clean_predictions"][m->name()] = predict(*m, x)[0];
  for (double range : config_.slice_ranges) {
    const auto s = boundary_grid(models, x, label, dirs, range, config_.slice_resolution);
    const auto files = export_slice(s, out, "slice_img" + std::to_string(idx) + "_r" + short_number(range));
    written.insert(written.end(), files.begin(), files.end());
    log_ << "slice: range " << range << " -> " << files.front().string() << "\n";
  }
  meta["ranges"] = config_.slice_ranges;
  write_json_file(out / ("slice_img" + std::to_string(idx) + ".json"), meta);
  return written;
}

}  // namespace kdadv
