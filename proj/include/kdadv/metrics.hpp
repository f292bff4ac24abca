#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "kdadv/classifier.hpp"
#include "kdadv/data.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

// Root mean square pixel difference of each image, on the 0-255 scale.
std::vector<double> per_image_rmsd(const Tensor& x, const Tensor& x_adv);
// Mean of the per-image values.
double rmsd(const Tensor& x, const Tensor& x_adv);

// Which samples count towards the attack success rate.
enum class AsrMode {
  kAll,           // every evaluated sample; clean mistakes count as successes
  kCleanCorrect,  // only samples the target classifies correctly before the attack
};
std::string_view asr_mode_name(AsrMode mode);
AsrMode parse_asr_mode(std::string_view name);

// Fraction of adversarial predictions that differ from the label. In
// kCleanCorrect mode `clean_predictions` selects the denominator; returns 0
// when it is empty.
double asr(std::span<const int> adversarial_predictions, std::span<const int> labels, AsrMode mode = AsrMode::kAll,
           std::span<const int> clean_predictions = {});

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Argmax predictions over a large batch, evaluated in chunks.
std::vector<int> predict_all(const Classifier& model, const Tensor& images, std::size_t chunk = 500);
double accuracy(const Classifier& model, const Dataset& data);

}  // namespace kdadv
