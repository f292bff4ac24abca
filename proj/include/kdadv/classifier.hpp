#pragma once

#include <functional>
#include <span>
#include <string>

#include "kdadv/tensor.hpp"

namespace kdadv {

// Maps a batch of logits to dLoss/dlogits of the same shape.
using LogitGradFn = std::function<Tensor(const Tensor& logits)>;

// Anything that produces logits for a batch of raw [0,255] images and can
// differentiate a logit-space loss back to those pixels. Models and
// ensembles both qualify; attacks and metrics only see this interface.
//
// Implementations must be safe for concurrent const calls.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual const std::string& name() const = 0;
  virtual int num_classes() const = 0;
  virtual Tensor logits(const Tensor& batch) const = 0;
  virtual Tensor input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const = 0;
};

// Presents another classifier under a different name. The wrapped
// classifier is borrowed.
class Renamed : public Classifier {
 public:
  Renamed(const Classifier& inner, std::string name) : inner_(&inner), name_(std::move(name)) {}
  const std::string& name() const override { return name_; }
  int num_classes() const override { return inner_->num_classes(); }
  Tensor logits(const Tensor& batch) const override { return inner_->logits(batch); }
  Tensor input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const override {
    return inner_->input_gradient(batch, loss_grad);
  }
  const Classifier& inner() const { return *inner_; }

 private:
  const Classifier* inner_;
  std::string name_;
};

enum class Loss { kCrossEntropy };

// Gradient of sum_i loss(f(x_i), y_i) with respect to the raw pixels of x.
// The sum (not the mean) keeps each sample's gradient independent of batch size.
Tensor loss_input_gradient(const Classifier& model, const Tensor& batch, std::span<const int> labels,
                           Loss loss = Loss::kCrossEntropy);

std::vector<int> predict(const Classifier& model, const Tensor& batch);

}  // namespace kdadv
