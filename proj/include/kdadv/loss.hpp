#pragma once

#include <span>

#include "kdadv/tensor.hpp"

namespace kdadv {

// Row-wise softmax of [B,K] logits divided by tau, with max subtraction.
Tensor softmax(const Tensor& logits, double tau = 1.0);
Tensor log_softmax(const Tensor& logits, double tau = 1.0);

std::vector<int> argmax_rows(const Tensor& logits);

// A scalar loss and its gradient with respect to the logits it was computed from.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

enum class Reduction { kMean, kSum };

// Cross-entropy -log softmax(z)[y] per row.
LossValue cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction = Reduction::kMean);

}  // namespace kdadv
