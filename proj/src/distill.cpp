#include "kdadv/distill.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>

namespace kdadv {

LossValue soft_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau, bool scale_by_tau2) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ContractError("soft_loss: teacher " + shape_string(teacher_logits.shape()) + " vs student " +
                        shape_string(student_logits.shape()));
  }
  const Tensor log_j = log_softmax(teacher_logits, tau);
  const Tensor log_p = log_softmax(student_logits, tau);
  const auto B = student_logits.dim(0);
  const auto K = student_logits.dim(1);
  const double scale = scale_by_tau2 ? tau * tau : 1.0;
  // d/ds_k of tau^2 * KL = tau * (P_k - J_k); divided by B for the mean.
  const double gscale = scale / tau / static_cast<double>(B);

  LossValue out;
  out.grad = Tensor(student_logits.shape());
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto lj = log_j.sample(b);
    const auto lp = log_p.sample(b);
    auto g = out.grad.sample(b);
    for (std::int64_t k = 0; k < K; ++k) {
      const double j = std::exp(static_cast<double>(lj[k]));
      const double p = std::exp(static_cast<double>(lp[k]));
      if (j > 0.0) total += j * (static_cast<double>(lj[k]) - lp[k]);
      g[k] = static_cast<float>((p - j) * gscale);
    }
  }
  out.value = scale * total / static_cast<double>(B);
  return out;
}

LossValue hard_loss(const Tensor& student_logits, std::span<const int> labels) {
  return cross_entropy(student_logits, labels, Reduction::kMean);
}

double kd_loss(double alpha, double hard, double soft) {
  if (alpha < 0.0 || alpha > 1.0) throw ContractError("alpha must lie in [0,1]");
  return alpha * hard + (1.0 - alpha) * soft;
}

LossValue kd_loss(double alpha, const LossValue& hard, const LossValue& soft) {
  if (hard.grad.shape() != soft.grad.shape()) throw ContractError("kd_loss: gradient shapes differ");
  LossValue out;
  out.value = kd_loss(alpha, hard.value, soft.value);
  // The end points return one term untouched so that alpha = 1 is exactly
  // supervised training (no signed-zero residue from a 0 * grad term).
  if (alpha == 1.0) {
    out.grad = hard.grad;
  } else if (alpha == 0.0) {
    out.grad = soft.grad;
  } else {
    out.grad = Tensor(hard.grad.shape());
    const auto a = static_cast<float>(alpha);
    const auto c = static_cast<float>(1.0 - alpha);
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = a * hard.grad[i] + c * soft.grad[i];
  }
  return out;
}

int curriculum_teacher(int epoch, int switch_period, int num_teachers) {
  if (epoch < 0 || switch_period < 1 || num_teachers < 1) {
    throw ContractError("curriculum_teacher: epoch >= 0, period >= 1 and at least one teacher required");
  }
  return (epoch / switch_period) % num_teachers;
}

LossValue joint_soft_loss(std::span<const Tensor> teacher_logits, const Tensor& student_logits, double tau,
                          bool scale_by_tau2) {
  if (teacher_logits.empty()) throw ContractError("joint_soft_loss needs at least one teacher");
  LossValue out;
  out.grad = Tensor(student_logits.shape());
  const double w = 1.0 / static_cast<double>(teacher_logits.size());
  for (const Tensor& t : teacher_logits) {
    const LossValue one = soft_loss(t, student_logits, tau, scale_by_tau2);
    out.value += one.value * w;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += static_cast<float>(one.grad[i] * w);
  }
  return out;
}

std::string_view strategy_name(Strategy s) { return s == Strategy::kCurriculum ? "curriculum" : "joint"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "curriculum") return Strategy::kCurriculum;
  if (name == "joint") return Strategy::kJoint;
  throw ConfigError("unknown distillation strategy '" + std::string(name) + "' (curriculum|joint)");
}

void KDConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (strategy == Strategy::kCurriculum && switch_period < 1) throw ConfigError("switch_period must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
}

void TrainSchedule::validate() const {
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (max_epochs > 0 && (warmup_epochs < 0 || warmup_epochs >= max_epochs)) {
    throw ConfigError("warmup_epochs must be in [0, max_epochs)");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (plateau_tolerance < 0.0) throw ConfigError("plateau_tolerance must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

double lr_at(int epoch, const TrainSchedule& s) {
  if (epoch < 0 || epoch >= s.max_epochs) throw ContractError("lr_at: epoch outside [0, max_epochs)");
  if (epoch < s.warmup_epochs) return s.max_lr * (epoch + 1) / s.warmup_epochs;
  const double t = static_cast<double>(epoch - s.warmup_epochs) / (s.max_epochs - s.warmup_epochs);
  return s.max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

bool EarlyStopping::observe(double val_loss) {
  if (!seen_ || val_loss < best_ - tolerance_) {
    best_ = val_loss;
    seen_ = true;
    waiting_ = 0;
  } else {
    ++waiting_;
  }
  return waiting_ >= patience_;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc,lr,teacher_index\n";
  out << std::setprecision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << ',' << e.lr << ','
        << e.teacher_index << '\n';
  }
}

TrainHistory TrainHistory::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("training history " + path.string());
  std::string line;
  std::getline(in, line);
  TrainHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochRecord e;
    char c1, c2, c3, c4, c5;
    if (!(row >> e.epoch >> c1 >> e.train_loss >> c2 >> e.val_loss >> c3 >> e.val_acc >> c4 >> e.lr >> c5 >>
          e.teacher_index)) {
      throw FormatError("bad history row in " + path.string() + ": " + line);
    }
    h.epochs.push_back(e);
  }
  return h;
}

Tensor dataset_logits(const Classifier& model, const Dataset& data, std::size_t chunk) {
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    parts.push_back(model.logits(data.images(begin, std::min(data.size(), begin + chunk))));
  }
  if (parts.empty()) return Tensor({0, model.num_classes()});
  return stack_batches(parts);
}

namespace {

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  const auto width = table.dim(1);
  Tensor out({static_cast<std::int64_t>(rows.size()), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = table.sample(static_cast<std::int64_t>(rows[i]));
    std::copy(src.begin(), src.end(), out.sample(static_cast<std::int64_t>(i)).begin());
  }
  return out;
}

// Teacher logits for every training image. Teachers are frozen and the data is
// not augmented, so these are computed once instead of per batch; batch
// independence of the engine makes the two bit-identical.
struct Distillation {
  const KDConfig* config = nullptr;
  std::vector<Tensor> teacher_logits;
};

std::string where(int epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
}

TrainResult fit(Model model, const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                std::uint64_t shuffle_seed, const Distillation* kd, const EpochCallback& on_epoch) {
  schedule.validate();
  if (model.num_classes() != train.num_classes()) {
    throw ConfigError("model has " + std::to_string(model.num_classes()) + " classes, data has " +
                      std::to_string(train.num_classes()));
  }
  if (train.size() == 0 || val.size() == 0) throw ConfigError("training needs non-empty train and val splits");

  TrainResult result;
  result.seed = shuffle_seed;
  AdamState adam(model.parameters(), AdamOptions{.weight_decay = schedule.weight_decay});
  EarlyStopping stopper(schedule.patience, schedule.plateau_tolerance);
  std::optional<std::vector<Parameter>> best;
  const auto batch_size = static_cast<std::size_t>(schedule.batch_size);

  for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, schedule);
    const KDConfig* cfg = kd ? kd->config : nullptr;
    if (cfg && cfg->strategy == Strategy::kCurriculum) {
      rec.teacher_index = curriculum_teacher(epoch, cfg->switch_period, static_cast<int>(kd->teacher_logits.size()));
    }

    double loss_sum = 0.0;
    const Batches batches(train, batch_size, shuffle_seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch batch = batches[bi];
      const ForwardTrace tr = model.trace(batch.images);
      const LossValue hard = hard_loss(tr.logits(), batch.labels);
      LossValue total;
      if (cfg) {
        LossValue soft;
        if (cfg->strategy == Strategy::kCurriculum) {
          const Tensor t = gather_rows(kd->teacher_logits[static_cast<std::size_t>(rec.teacher_index)], batch.indices);
          soft = soft_loss(t, tr.logits(), cfg->tau, cfg->scale_soft_by_tau2);
        } else {
          std::vector<Tensor> ts;
          for (const auto& all : kd->teacher_logits) ts.push_back(gather_rows(all, batch.indices));
          soft = joint_soft_loss(ts, tr.logits(), cfg->tau, cfg->scale_soft_by_tau2);
        }
        total = kd_loss(cfg->alpha, hard, soft);
      } else {
        total = hard;
      }
      if (!std::isfinite(total.value)) {
        throw TrainingDiverged("non-finite training loss at " + where(epoch, bi), result.history);
      }
      ParamGrads grads = model.zero_grads();
      model.backward(tr, total.grad, &grads, nullptr);
      try {
        adam.step(model.parameters(), grads, rec.lr);
      } catch (const DivergenceError& e) {
        throw TrainingDiverged(std::string(e.what()) + " at " + where(epoch, bi), result.history);
      }
      loss_sum += total.value * static_cast<double>(batch.labels.size());
    }
    rec.train_loss = loss_sum / static_cast<double>(train.size());

    const Tensor z = dataset_logits(model, val);
    rec.val_loss = cross_entropy(z, val.labels()).value;
    const auto pred = argmax_rows(z);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val.labels()[i];
    rec.val_acc = static_cast<double>(correct) / static_cast<double>(val.size());
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDiverged("non-finite validation loss at epoch " + std::to_string(epoch), result.history);
    }

    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!best || rec.val_acc > result.best_val_acc) {
      best = model.parameters();
      result.best_val_acc = rec.val_acc;
      result.best_epoch = epoch;
    }
    if (stopper.observe(rec.val_loss)) {
      result.history.stopped_early = epoch + 1 < schedule.max_epochs;
      break;
    }
  }
  if (best) model.parameters() = std::move(*best);
  result.model = std::move(model);
  result.seed_val_acc.emplace_back(shuffle_seed, result.best_val_acc);
  return result;
}

}  // namespace

TrainResult train_supervised(Model model, const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                             std::uint64_t shuffle_seed, const EpochCallback& on_epoch) {
  return fit(std::move(model), train, val, schedule, shuffle_seed, nullptr, on_epoch);
}

TrainResult train_student(const KDConfig& config, std::span<const Classifier* const> teachers, const Model& student,
                          const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                          const EpochCallback& on_epoch) {
  config.validate();
  if (teachers.empty()) throw ConfigError("distillation needs at least one teacher");
  Distillation kd;
  kd.config = &config;
  for (const Classifier* t : teachers) {
    if (t->num_classes() != student.num_classes()) {
      throw ConfigError("teacher " + t->name() + " has " + std::to_string(t->num_classes()) + " classes, student " +
                        std::to_string(student.num_classes()));
    }
    kd.teacher_logits.push_back(dataset_logits(*t, train));
  }

  std::optional<TrainResult> best;
  std::vector<std::pair<std::uint64_t, double>> tried;
  for (std::uint64_t seed : config.seeds) {
    Model init = student;
    init.initialize(seed);
    TrainResult r = fit(std::move(init), train, val, schedule, seed, &kd, on_epoch);
    tried.emplace_back(seed, r.best_val_acc);
    if (!best || r.best_val_acc > best->best_val_acc) best = std::move(r);
  }
  best->seed_val_acc = std::move(tried);
  return std::move(*best);
}

}  // namespace kdadv
