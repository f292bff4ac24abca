#include "kdadv/metrics.hpp"

#include <cmath>

#include "kdadv/error.hpp"
#include "kdadv/loss.hpp"

namespace kdadv {

std::vector<double> per_image_rmsd(const Tensor& x, const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) {
    throw ContractError("rmsd: shapes " + shape_string(x.shape()) + " and " + shape_string(x_adv.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(x.dim(0)));
  for (std::int64_t b = 0; b < x.dim(0); ++b) {
    const auto a = x.sample(b);
    const auto c = x_adv.sample(b);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(c[i]) - a[i];
      sq += d * d;
    }
    out[static_cast<std::size_t>(b)] = std::sqrt(sq / static_cast<double>(a.size()));
  }
  return out;
}

double rmsd(const Tensor& x, const Tensor& x_adv) {
  const auto per = per_image_rmsd(x, x_adv);
  if (per.empty()) return 0.0;
  double sum = 0.0;
  for (double v : per) sum += v;
  return sum / static_cast<double>(per.size());
}

std::string_view asr_mode_name(AsrMode mode) { return mode == AsrMode::kAll ? "all" : "clean-correct"; }

AsrMode parse_asr_mode(std::string_view name) {
  if (name == "all") return AsrMode::kAll;
  if (name == "clean-correct") return AsrMode::kCleanCorrect;
  throw ConfigError("unknown ASR mode '" + std::string(name) + "' (all|clean-correct)");
}

double asr(std::span<const int> adversarial_predictions, std::span<const int> labels, AsrMode mode,
           std::span<const int> clean_predictions) {
  if (adversarial_predictions.size() != labels.size()) throw ContractError("asr: prediction/label count mismatch");
  if (mode == AsrMode::kCleanCorrect && clean_predictions.size() != labels.size()) {
    throw ContractError("asr: clean-correct mode needs clean predictions for every sample");
  }
  std::size_t counted = 0, fooled = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mode == AsrMode::kCleanCorrect && clean_predictions[i] != labels[i]) continue;
    ++counted;
    fooled += adversarial_predictions[i] != labels[i];
  }
  return counted == 0 ? 0.0 : static_cast<double>(fooled) / static_cast<double>(counted);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ContractError("accuracy: prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

std::vector<int> predict_all(const Classifier& model, const Tensor& images, std::size_t chunk) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(images.dim(0)));
  const auto n = static_cast<std::size_t>(images.dim(0));
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const auto end = std::min(n, begin + chunk);
    const auto p = argmax_rows(model.logits(images.slice(static_cast<std::int64_t>(begin), static_cast<std::int64_t>(end))));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double accuracy(const Classifier& model, const Dataset& data) {
  return accuracy(predict_all(model, data.all_images()), data.labels());
}

}  // namespace kdadv
