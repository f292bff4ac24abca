#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "kdadv/attacks.hpp"
#include "kdadv/boundary.hpp"
#include "kdadv/config.hpp"
#include "kdadv/data.hpp"
#include "kdadv/evaluation.hpp"
#include "kdadv/model.hpp"

namespace kdadv {

// Artifact ids of the supervised models.
inline constexpr const char* kBlackboxId = "blackbox";
std::string model_id(Role role);  // teacher-residual, teacher-dense, blackbox
std::string student_id(const KDConfig& kd);
inline constexpr const char* kEnsembleId = "ensemble";

struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  Normalization normalization;
  bool cache_hit = false;
};

// Runs the pipeline stages against an output directory:
//   data/     prepared splits and their statistics
//   models/   checkpoints, training histories and metadata
//   attacks/  adversarial archives
//   reports/  evaluation matrix and ablation
//   slices/   decision-boundary grids
// Each artifact records the digest of the configuration it was built from.
// Stages reuse artifacts whose digest matches and refuse stale ones.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::ostream& log);

  const RunConfig& config() const { return config_; }
  std::filesystem::path dir(const std::string& sub) const { return config_.out_dir / sub; }

  const PreparedData& prepare();
  // Loads prepared data; MissingArtifact when `prepare` has not run for this configuration.
  const PreparedData& data();

  // Returns false when a matching checkpoint already existed.
  bool train(Role role);
  bool train(const KDConfig& kd);
  // The black box, both teachers and the two evaluation students.
  void train_all();
  // Every student of the ablation grid, one per seed.
  void train_grid();

  // Loads a checkpoint after checking that it belongs to this configuration.
  Model load(const std::string& id) const;

  // Attackers of the evaluation matrix, in report order.
  std::vector<std::string> attacker_ids() const;

  struct AttackResult {
    nlohmann::json metadata;
    bool cache_hit = false;
  };
  // Calibrates (unless `epsilon` is given), generates over the test set and archives.
  AttackResult attack(const std::string& attacker, AttackKind kind, std::optional<double> epsilon = std::nullopt);

  EvalReport evaluate();
  AblationReport ablate();
  // Writes a CSV and per-model pixmaps for each configured range.
  std::vector<std::filesystem::path> slice(std::optional<std::size_t> image_index = std::nullopt);

 private:
  struct Loaded;
  bool train_as(const KDConfig& kd, const std::string& id);
  std::vector<std::pair<std::string, KDConfig>> grid_students() const;
  std::unique_ptr<Loaded> load_attackers(const std::vector<std::string>& ids) const;
  std::string model_hash(const std::string& id) const;
  std::filesystem::path archive_path(const std::string& attacker, AttackKind kind) const;
  std::optional<double> archived_epsilon(const std::string& attacker, AttackKind kind) const;
  void write_archive(const std::string& attacker, const AttackOutput& out, const nlohmann::json& extra) const;
  KDConfig matrix_student(Strategy s) const;

  RunConfig config_;
  std::ostream& log_;
  std::optional<PreparedData> data_;
};

// Maps an exception to the documented process exit codes:
// 2 ingestion, 3 divergence, 4 calibration, 5 missing artifact, 6 config, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace kdadv
