#include "kdadv/classifier.hpp"

#include "kdadv/loss.hpp"

namespace kdadv {

Tensor loss_input_gradient(const Classifier& model, const Tensor& batch, std::span<const int> labels, Loss loss) {
  switch (loss) {
    case Loss::kCrossEntropy:
      break;
  }
  return model.input_gradient(batch, [labels](const Tensor& logits) {
    return cross_entropy(logits, labels, Reduction::kSum).grad;
  });
}

std::vector<int> predict(const Classifier& model, const Tensor& batch) { return argmax_rows(model.logits(batch)); }

}  // namespace kdadv
