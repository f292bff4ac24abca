#pragma once

#include <cstdint>
#include <vector>

#include "kdadv/model.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-6;  // decoupled: theta -= lr * decay * theta
};

// Adam with bias correction and decoupled weight decay.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<Parameter>& params, AdamOptions options);

  const AdamOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  // Throws DivergenceError naming the parameter if any gradient is not finite.
  // Parameters are left untouched in that case.
  void step(std::vector<Parameter>& params, const ParamGrads& grads, double lr);

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace kdadv
