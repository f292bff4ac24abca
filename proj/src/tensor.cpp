#include "kdadv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kdadv/error.hpp"

namespace kdadv {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ContractError("shape " + shape_string(shape) + " has a non-positive dimension");
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
    throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_string(shape_));
  }
}

std::int64_t Tensor::sample_size() const {
  if (shape_.empty()) return 0;
  return static_cast<std::int64_t>(data_.size()) / shape_[0];
}

std::span<float> Tensor::sample(std::int64_t i) {
  const auto n = sample_size();
  return std::span<float>(data_).subspan(static_cast<std::size_t>(i * n), static_cast<std::size_t>(n));
}

std::span<const float> Tensor::sample(std::int64_t i) const {
  const auto n = sample_size();
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(i * n), static_cast<std::size_t>(n));
}

Tensor Tensor::slice(std::int64_t begin, std::int64_t end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin >= end) {
    throw ContractError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                        shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = end - begin;
  const auto n = sample_size();
  std::vector<float> d(data_.begin() + begin * n, data_.begin() + end * n);
  return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor stack_batches(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack_batches needs at least one tensor");
  Shape s = parts.front().shape();
  std::int64_t total = 0;
  std::vector<float> d;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
      throw ContractError("stack_batches: trailing shape mismatch " + shape_string(p.shape()) + " vs " +
                          shape_string(s));
    }
    total += p.dim(0);
    d.insert(d.end(), p.data().begin(), p.data().end());
  }
  s[0] = total;
  return Tensor(std::move(s), std::move(d));
}

}  // namespace kdadv
