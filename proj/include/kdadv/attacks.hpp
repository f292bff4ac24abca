#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdadv/classifier.hpp"
#include "kdadv/data.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

enum class AttackKind { kFg, kFgs, kPgd };
std::string_view attack_name(AttackKind kind);
AttackKind parse_attack(std::string_view name);

// Everything needed to reproduce one adversarial generation. Epsilon is in
// pixel units: an l2 radius for fg, an l-infinity radius for fgs and pgd.
struct AttackSpec {
  AttackKind kind = AttackKind::kFgs;
  double epsilon = 0.0;
  std::optional<double> step_size;  // pgd; defaults to 2.5 * epsilon / iterations
  int iterations = 10;              // pgd
  float clip_lo = 0.0f;
  float clip_hi = 255.0f;

  double effective_step() const;
  void validate() const;
};

// epsilon * sign(grad), with sign(0) = 0.
Tensor sign_perturbation(const Tensor& grad, double epsilon);
// epsilon * grad / ||grad||_2 per image; zero for images whose gradient norm is below 1e-12.
Tensor l2_perturbation(const Tensor& grad, double epsilon);

// Non-targeted attacks that increase cross-entropy against the true labels.
Tensor fgs(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, float lo = 0.0f,
           float hi = 255.0f);
Tensor fg(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, float lo = 0.0f,
          float hi = 255.0f);
// Starts at x; each iteration takes a signed step, projects onto the
// l-infinity ball around x and clips to [lo, hi].
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, double step_size,
           int iterations, float lo = 0.0f, float hi = 255.0f);
Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

enum class EnsembleMode { kLogits, kProbabilities };
std::string_view ensemble_mode_name(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(std::string_view name);

// Weighted combination of member classifiers. kLogits averages logits;
// kProbabilities averages softmax outputs and reports their log as logits.
// Members are borrowed and must outlive the ensemble.
class Ensemble : public Classifier {
 public:
  Ensemble(std::string name, std::vector<const Classifier*> members, std::vector<double> weights,
           EnsembleMode mode = EnsembleMode::kLogits);
  // Equal weights.
  Ensemble(std::string name, std::vector<const Classifier*> members, EnsembleMode mode = EnsembleMode::kLogits);

  const std::string& name() const override { return name_; }
  int num_classes() const override { return num_classes_; }
  Tensor logits(const Tensor& batch) const override;
  Tensor input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const override;

  EnsembleMode mode() const { return mode_; }
  std::span<const double> weights() const { return weights_; }

 private:
  std::string name_;
  std::vector<const Classifier*> members_;
  std::vector<double> weights_;
  EnsembleMode mode_;
  int num_classes_ = 0;
};

struct CalibrationOptions {
  double target_rmsd = 25.0;
  double tolerance = 1.0;
  int max_bisections = 30;
  // Allowed drop in mean RMSD between increasing epsilons before the search
  // declares the premise of monotonicity broken.
  double monotonicity_slack = 0.05;
};

struct CalibrationResult {
  double epsilon = 0.0;
  double achieved_rmsd = 0.0;
  int evaluations = 0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
};

// Upper end of the epsilon search bracket: 255 for fgs and pgd, and the l2
// norm of a full-range perturbation (255 * sqrt(pixels)) for fg.
double epsilon_upper_bound(AttackKind kind, const Shape& image_shape);

// Bisection on epsilon until the mean RMSD over (x, y) is within tolerance of
// the target. `base` supplies kind, pgd iterations and clip range; its
// epsilon is ignored, and a pgd step size, if unset, scales with epsilon.
CalibrationResult calibrate_epsilon(const AttackSpec& base, const Classifier& model, const Tensor& x,
                                    std::span<const int> y, const CalibrationOptions& options = {});

struct GenerateOptions {
  std::size_t batch_size = 150;
  bool warmup_batch = true;  // run one untimed batch before the timed pass
};

struct AttackOutput {
  Tensor images;
  std::vector<double> rmsd;  // per image
  double mean_rmsd = 0.0;
  double seconds = 0.0;      // wall clock of the timed pass over all batches
  int parallelism = 1;       // worker threads used while timing
  std::string attacker;
  AttackSpec spec;
};

// Attacks every image of `data`, in batches, timing the whole pass.
AttackOutput generate(const Classifier& attacker, const Dataset& data, const AttackSpec& spec,
                      const GenerateOptions& options = {});

// Adversarial images rounded to bytes in the CIFAR record layout, plus a JSON
// metadata file next to it (same stem, .json). `extra` is merged into the metadata.
void write_attack_archive(const AttackOutput& output, const Dataset& source, const std::filesystem::path& bin_path,
                          const nlohmann::json& extra = nlohmann::json::object());
nlohmann::json attack_metadata(const AttackOutput& output);
Dataset read_attack_archive(const std::filesystem::path& bin_path, const Dataset& source);

}  // namespace kdadv
