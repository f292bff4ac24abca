#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "kdadv/adam.hpp"
#include "kdadv/classifier.hpp"
#include "kdadv/data.hpp"
#include "kdadv/error.hpp"
#include "kdadv/loss.hpp"
#include "kdadv/model.hpp"

namespace kdadv {

// Temperature-softened softmax; same as softmax(logits, tau).
inline Tensor softmax_tau(const Tensor& logits, double tau) { return softmax(logits, tau); }

// Batch mean of KL(J || P), J = softmax(teacher / tau), P = softmax(student / tau),
// multiplied by tau^2 when `scale_by_tau2` is set. The gradient is with respect
// to the student logits only.
LossValue soft_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau, bool scale_by_tau2 = true);

// Batch mean cross-entropy at tau = 1.
LossValue hard_loss(const Tensor& student_logits, std::span<const int> labels);

double kd_loss(double alpha, double hard, double soft);
LossValue kd_loss(double alpha, const LossValue& hard, const LossValue& soft);

int curriculum_teacher(int epoch, int switch_period, int num_teachers);

// Unweighted mean of soft_loss over the teachers.
LossValue joint_soft_loss(std::span<const Tensor> teacher_logits, const Tensor& student_logits, double tau,
                          bool scale_by_tau2 = true);

enum class Strategy { kCurriculum, kJoint };
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct KDConfig {
  Strategy strategy = Strategy::kCurriculum;
  double alpha = 0.3;
  double tau = 1.0;
  int switch_period = 4;
  bool scale_soft_by_tau2 = true;
  std::vector<std::uint64_t> seeds = {0, 1};

  void validate() const;
};

struct TrainSchedule {
  int max_epochs = 100;
  int warmup_epochs = 30;
  double max_lr = 1e-2;
  int patience = 10;
  double plateau_tolerance = 1e-4;
  int batch_size = 256;
  double weight_decay = 1e-6;

  void validate() const;
};

// Linear ramp to max_lr over the warmup epochs, then cosine decay to zero at
// the final epoch.
double lr_at(int epoch, const TrainSchedule& schedule);

// Stops once validation loss has failed to improve on its best value by more
// than `tolerance` for `patience` consecutive epochs.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double tolerance) : patience_(patience), tolerance_(tolerance) {}
  // Returns true when training should stop after this epoch.
  bool observe(double val_loss);
  double best() const { return best_; }

 private:
  int patience_;
  double tolerance_;
  double best_ = 0.0;
  bool seen_ = false;
  int waiting_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  int teacher_index = -1;  // -1 when no single teacher is active
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;

  void write_csv(const std::filesystem::path& path) const;
  static TrainHistory read_csv(const std::filesystem::path& path);
};

// Raised when a loss or gradient goes non-finite; carries the epochs completed so far.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history)
      : DivergenceError(what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  Model model;  // parameters from the epoch with the highest validation accuracy
  TrainHistory history;
  std::uint64_t seed = 0;
  double best_val_acc = 0.0;
  int best_epoch = -1;
  std::vector<std::pair<std::uint64_t, double>> seed_val_acc;  // every seed tried, in order
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Cross-entropy training from the model's current parameters. `shuffle_seed`
// drives batch order.
TrainResult train_supervised(Model model, const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                             std::uint64_t shuffle_seed, const EpochCallback& on_epoch = {});

// Distils the teachers into `student`, once per seed in config.seeds (the
// student is re-initialized from each seed, which also seeds shuffling), and
// keeps the run with the higher validation accuracy. Teachers are only read.
TrainResult train_student(const KDConfig& config, std::span<const Classifier* const> teachers, const Model& student,
                          const Dataset& train, const Dataset& val, const TrainSchedule& schedule,
                          const EpochCallback& on_epoch = {});

// Logits for a whole dataset, evaluated in fixed-size chunks.
Tensor dataset_logits(const Classifier& model, const Dataset& data, std::size_t chunk = 500);

}  // namespace kdadv
