#include "kdadv/adam.hpp"

#include <cmath>

#include "kdadv/error.hpp"

namespace kdadv {

AdamState::AdamState(const std::vector<Parameter>& params, AdamOptions options) : options_(options) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void AdamState::step(std::vector<Parameter>& params, const ParamGrads& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ContractError("adam: parameter, gradient and moment counts differ");
  }
  if (!(lr > 0.0)) throw ContractError("adam: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || m_[i].shape() != params[i].value.shape()) {
      throw ContractError("adam: shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) throw DivergenceError("adam: non-finite gradient for parameter " + params[i].name);
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<float>(options_.beta1);
  const auto b2 = static_cast<float>(options_.beta2);
  const auto c1 = static_cast<float>(1.0 - options_.beta1);
  const auto c2 = static_cast<float>(1.0 - options_.beta2);
  const auto step_scale = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(options_.epsilon);
  const auto decay = static_cast<float>(1.0 - lr * options_.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.data();
    const auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + c1 * g[j];
      v[j] = b2 * v[j] + c2 * g[j] * g[j];
      const float denom = std::sqrt(v[j]) * inv_sqrt_bc2 + eps;
      theta[j] = theta[j] * decay - step_scale * m[j] / denom;
    }
  }
}

}  // namespace kdadv
