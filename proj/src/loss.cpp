#include "kdadv/loss.hpp"

#include <algorithm>
#include <cmath>

#include "kdadv/error.hpp"

namespace kdadv {
namespace {

void check_logits(const Tensor& logits, double tau) {
  if (logits.rank() != 2) throw ContractError("expected [B,K] logits, got " + shape_string(logits.shape()));
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
}

}  // namespace

Tensor log_softmax(const Tensor& logits, double tau) {
  check_logits(logits, tau);
  Tensor out(logits.shape());
  const auto K = logits.dim(1);
  for (std::int64_t b = 0; b < logits.dim(0); ++b) {
    const auto z = logits.sample(b);
    auto o = out.sample(b);
    const double m = *std::max_element(z.begin(), z.end()) / tau;
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] / tau - m);
    const double lse = m + std::log(sum);
    for (std::int64_t k = 0; k < K; ++k) o[k] = static_cast<float>(z[k] / tau - lse);
  }
  return out;
}

Tensor softmax(const Tensor& logits, double tau) {
  check_logits(logits, tau);
  Tensor out(logits.shape());
  const auto K = logits.dim(1);
  for (std::int64_t b = 0; b < logits.dim(0); ++b) {
    const auto z = logits.sample(b);
    auto o = out.sample(b);
    const double m = *std::max_element(z.begin(), z.end()) / tau;
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] / tau - m);
    for (std::int64_t k = 0; k < K; ++k) o[k] = static_cast<float>(std::exp(z[k] / tau - m) / sum);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  check_logits(logits, 1.0);
  std::vector<int> out(static_cast<std::size_t>(logits.dim(0)));
  for (std::int64_t b = 0; b < logits.dim(0); ++b) {
    const auto z = logits.sample(b);
    out[static_cast<std::size_t>(b)] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

LossValue cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction) {
  check_logits(logits, 1.0);
  const auto B = logits.dim(0);
  const auto K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) throw ContractError("cross_entropy: label count mismatch");
  const Tensor logp = log_softmax(logits);
  LossValue out;
  out.grad = Tensor(logits.shape());
  const double scale = reduction == Reduction::kMean ? 1.0 / static_cast<double>(B) : 1.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range");
    const auto lp = logp.sample(b);
    auto g = out.grad.sample(b);
    out.value -= lp[y];
    for (std::int64_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(lp[k]));
      g[k] = static_cast<float>((p - (k == y ? 1.0 : 0.0)) * scale);
    }
  }
  out.value *= scale;
  return out;
}

}  // namespace kdadv
