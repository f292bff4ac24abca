#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdadv/attacks.hpp"
#include "kdadv/data.hpp"
#include "kdadv/distill.hpp"
#include "kdadv/metrics.hpp"
#include "kdadv/zoo.hpp"

namespace kdadv {

struct DataConfig {
  enum class Source { kCifar10, kSynthetic };
  Source source = Source::kCifar10;
  std::filesystem::path cifar_dir;  // cifar10 only
  BlobOptions blobs;                 // synthetic only; n_per_class applies to the training pool
  int synthetic_test_per_class = 100;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  std::size_t train_limit = 0;  // 0 keeps every training image; otherwise a stratified-by-order head
  std::size_t test_limit = 0;
};

struct RunConfig {
  DataConfig data;
  std::filesystem::path out_dir = "runs/default";
  ZooScale zoo_scale = ZooScale::kFull;
  std::uint64_t model_seed = 0;  // initialization of teachers and the black box

  TrainSchedule schedule;
  std::vector<double> lr_grid = {1e-2, 1e-3};

  // Students in the evaluation matrix use `kd`; the ablation sweeps the grids.
  KDConfig kd;
  std::vector<Strategy> strategy_grid = {Strategy::kCurriculum, Strategy::kJoint};
  std::vector<double> alpha_grid = {0.0, 0.3};
  std::vector<double> tau_grid = {1.0, 5.0};

  std::vector<AttackKind> attacks = {AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd};
  int pgd_iterations = 10;
  std::size_t attack_batch = 150;
  bool warmup_batch = true;
  EnsembleMode ensemble_mode = EnsembleMode::kLogits;

  double rmsd_budget = 25.0;
  double rmsd_tolerance = 1.0;         // accepted spread of reported RMSD
  double calibration_tolerance = 0.25;  // bisection stopping rule on the calibration images
  std::size_t calibration_images = 1000;

  AsrMode asr_mode = AsrMode::kAll;

  std::size_t slice_image = 0;
  std::uint64_t slice_seed = 0;
  std::vector<double> slice_ranges = {50.0, 6.0};
  int slice_resolution = 101;

  bool serial = true;

  void validate() const;
};

RunConfig default_config();
// Synthetic data, tiny models and 10 epochs: the whole pipeline in a few minutes.
RunConfig fast_config();

nlohmann::json to_json(const RunConfig& config);
// Keys missing from `j` keep the values of `base`; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j, const RunConfig& base = default_config());
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = default_config());

// Digests over the parts of the configuration each artifact depends on.
std::string data_hash(const RunConfig& c);
std::string supervised_hash(const RunConfig& c, Role role);
std::string student_hash(const RunConfig& c, const KDConfig& kd);
std::string attack_hash(const RunConfig& c);
std::string config_hash(const RunConfig& c);

}  // namespace kdadv
