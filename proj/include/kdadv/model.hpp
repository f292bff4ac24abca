#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdadv/classifier.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

enum class LayerKind { kInput, kConv2d, kDense, kRelu, kMaxPool2d, kGlobalAvgPool, kAddSkip, kConcat, kFlatten };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

// One node of the model graph. Node 0 is always the input placeholder and
// nodes are stored in topological order.
struct Layer {
  LayerKind kind = LayerKind::kInput;
  std::vector<int> inputs;
  int out_features = 0;  // conv2d output channels, dense output width
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  Shape out_shape;  // per sample, no batch axis
  int weight = -1;  // index into Model::parameters(), -1 when absent
  int bias = -1;
};

struct Parameter {
  std::string name;
  Tensor value;
};

// Per-channel affine map applied to raw pixels at the start of forward().
// Channel c covers a contiguous block of sample_size / channels elements.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

// Activations kept by a forward pass so backward() can run without recomputing.
class ForwardTrace {
 public:
  const Tensor& logits() const { return activations_.back(); }
  const Tensor& activation(std::size_t node) const { return activations_.at(node); }
  // Flat input offsets chosen by a max-pool node, one per output element; empty for other kinds.
  const std::vector<std::int32_t>& pool_winners(std::size_t node) const { return argmax_.at(node); }

 private:
  friend class Model;
  std::vector<Tensor> activations_;
  std::vector<std::vector<std::int32_t>> argmax_;  // max-pool winners, per node
};

using ParamGrads = std::vector<Tensor>;

// A fixed-vocabulary feed-forward graph.
//
// Every kernel processes the batch one sample at a time, and parameter
// gradients are accumulated over samples in batch order. Results for a sample
// therefore never depend on the rest of the batch, and runs are bit-identical
// for identical inputs.
class Model : public Classifier {
 public:
  const std::string& name() const override { return name_; }
  int num_classes() const override { return num_classes_; }
  Tensor logits(const Tensor& batch) const override { return forward(batch); }
  Tensor input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const override;

  const Shape& input_shape() const { return input_shape_; }
  std::span<const Layer> layers() const { return layers_; }
  const Normalization& normalization() const { return normalization_; }
  void set_normalization(Normalization norm);

  std::vector<Parameter>& parameters() { return parameters_; }
  const std::vector<Parameter>& parameters() const { return parameters_; }
  std::int64_t parameter_count() const;
  ParamGrads zero_grads() const;

  Tensor forward(const Tensor& batch) const;
  ForwardTrace trace(const Tensor& batch) const;

  // Reverse pass from dLoss/dlogits. Pass nullptr for outputs you do not need;
  // skipping the input gradient also skips the first layer's data gradient.
  void backward(const ForwardTrace& trace, const Tensor& grad_logits, ParamGrads* param_grads,
                Tensor* input_grad) const;

  ParamGrads param_gradients(const Tensor& batch, const Tensor& grad_logits) const;
  Tensor input_gradient(const Tensor& batch, const Tensor& grad_logits) const;

  // Canonical text form of the architecture (name, shapes, graph). Parameters
  // and normalization are not part of it.
  std::string descriptor() const;
  std::uint64_t architecture_hash() const;
  static Model from_descriptor(std::string_view text);

  // Fan-in scaled normal weights (std = sqrt(2 / fan_in)) and zero biases,
  // drawn in parameter declaration order.
  void initialize(std::uint64_t seed);

 private:
  friend class ModelBuilder;
  void check_input(const Tensor& batch) const;

  std::string name_;
  Shape input_shape_;
  int num_classes_ = 0;
  Normalization normalization_;
  std::vector<Layer> layers_;
  std::vector<Parameter> parameters_;
};

// Incremental graph construction. Each call returns the new node's index.
class ModelBuilder {
 public:
  ModelBuilder(std::string name, Shape input_shape, int num_classes);

  int input() const { return 0; }
  int conv2d(int in, int out_channels, int kernel, int stride = 1, int padding = 0);
  int dense(int in, int out_features);
  int relu(int in);
  int max_pool2d(int in, int kernel, int stride);
  int global_avg_pool(int in);
  int add(int a, int b);
  int concat(std::vector<int> ins);
  int flatten(int in);

  const Shape& shape_of(int node) const { return model_.layers_.at(static_cast<std::size_t>(node)).out_shape; }

  // The output node must be the last one added and have shape [num_classes].
  Model build(std::uint64_t seed);

 private:
  int push(Layer layer);
  const Layer& node(int i) const;
  Model model_;
};

}  // namespace kdadv
