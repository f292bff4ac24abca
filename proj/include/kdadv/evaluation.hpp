#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdadv/attacks.hpp"
#include "kdadv/classifier.hpp"
#include "kdadv/data.hpp"
#include "kdadv/distill.hpp"
#include "kdadv/metrics.hpp"

namespace kdadv {

enum class AttackerType { kSelf, kBaseline, kEnsemble, kStudent };
std::string_view attacker_type_name(AttackerType type);
AttackerType parse_attacker_type(std::string_view name);

struct KDParams {
  Strategy strategy = Strategy::kCurriculum;
  double alpha = 0.0;
  double tau = 1.0;
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::string attacker;
  AttackerType type = AttackerType::kBaseline;
  AttackKind attack = AttackKind::kFgs;
  double rmsd = 0.0;
  double asr = 0.0;
  double clean_acc = 0.0;   // target accuracy on the clean test set
  double pgd_time_s = 0.0;  // the attacker's pgd generation time, repeated on each of its rows
  std::optional<KDParams> kd;
};

// Per-row details that do not belong in the tabular schema.
struct RowDetail {
  double epsilon = 0.0;
  double calibration_rmsd = 0.0;
  int calibration_evaluations = 0;
  double seconds = 0.0;  // generation time of this row's attack
  int parallelism = 1;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<RowDetail> details;  // parallel to rows
  AsrMode asr_mode = AsrMode::kAll;
  std::string target;
  std::string config_hash;

  nlohmann::json metadata() const;
};

// CSV with the fixed column order below, 4 decimals, plus a metadata sidecar
// (<stem>.meta.json) carrying the ASR mode, config hash and per-row details.
inline constexpr std::string_view kReportColumns =
    "attacker,type,attack,rmsd,asr,clean_acc,pgd_time_s,alpha,tau,strategy,seed";
enum class ReportFormat { kCsv, kJson };
void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport read_report(const std::filesystem::path& path, ReportFormat format);
std::string format_report_table(const EvalReport& report);

struct Attacker {
  const Classifier* model = nullptr;
  AttackerType type = AttackerType::kBaseline;
  std::optional<KDParams> kd;
};

struct MatrixOptions {
  std::vector<AttackKind> attacks = {AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd};
  int pgd_iterations = 10;
  CalibrationOptions calibration;
  std::size_t calibration_images = 1000;  // leading test images used for calibration
  GenerateOptions generation;
  AsrMode asr_mode = AsrMode::kAll;
  std::string config_hash;
  // Written after every completed row, so a failure leaves the finished rows on disk.
  std::optional<std::filesystem::path> partial_report;
  // Called with each adversarial batch set before it is scored, e.g. to archive it.
  std::function<void(const Attacker&, const AttackOutput&)> on_output;
  // Skips calibration for (attacker name, kind) pairs that have a known epsilon.
  std::function<std::optional<double>(const std::string&, AttackKind)> known_epsilon;
};

// One row per (attacker, attack): calibrate epsilon on the attacker, generate
// over the whole test set, score the adversarial images on the target.
EvalReport run_matrix(std::span<const Attacker> attackers, const Classifier& target, const Dataset& test,
                      const MatrixOptions& options);

struct AblationRow {
  Strategy strategy = Strategy::kCurriculum;
  double alpha = 0.0;
  double tau = 1.0;
  std::uint64_t seed = 0;
  double rmsd = 0.0;  // mean over the three attacks
  double fg_asr = 0.0;
  double fgs_asr = 0.0;
  double pgd_asr = 0.0;
  double test_acc = 0.0;  // the student's own clean test accuracy
  double pgd_time_s = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  AsrMode asr_mode = AsrMode::kAll;
  std::string config_hash;
};

inline constexpr std::string_view kAblationColumns =
    "strategy,alpha,tau,seed,rmsd,fg_asr,fgs_asr,pgd_asr,test_acc,pgd_time_s";

// Collapses a student-only matrix into one row per student.
AblationReport ablation_from_matrix(const EvalReport& matrix, std::span<const Attacker> students,
                                    std::span<const double> student_test_acc);
AblationReport run_ablation(std::span<const Attacker> students, const Classifier& target, const Dataset& test,
                            const MatrixOptions& options);
void write_ablation(const AblationReport& report, const std::filesystem::path& path, ReportFormat format);
AblationReport read_ablation(const std::filesystem::path& path, ReportFormat format);
std::string format_ablation_table(const AblationReport& report);

}  // namespace kdadv
