#include "kdadv/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kdadv/error.hpp"
#include "kdadv/hash.hpp"

namespace kdadv {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

// Fixed-order kernels for the cases Eigen would hand to alignment-sensitive
// paths (reductions, matrix-vector and tiny coefficient-based products).
// Lanes are chosen by index, never by address, so results do not depend on
// where a buffer happens to sit in memory.
float dot(const float* a, const float* b, std::int64_t n) {
  constexpr int kLanes = 16;
  float acc[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  for (int w = kLanes / 2; w > 0; w /= 2) {
    for (int l = 0; l < w; ++l) acc[l] += acc[l + w];
  }
  return acc[0] + tail;
}

void axpy(float* y, const float* x, float a, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Eigen's blocked GEMM packs its operands, so its summation order depends only
// on the matrix sizes. Outside that regime fall back to the loops above.
bool use_gemm(std::int64_t m, std::int64_t k, std::int64_t n) { return m > 1 && n > 1 && m + k + n >= 24; }

// C (+)= A B with A [m,k], B [k,n], all row-major.
void matmul(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
  if (use_gemm(m, k, n)) {
    MapMat C(c, m, n);
    if (accumulate) {
      C.noalias() += MapConstMat(a, m, k) * MapConstMat(b, k, n);
    } else {
      C.noalias() = MapConstMat(a, m, k) * MapConstMat(b, k, n);
    }
    return;
  }
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) axpy(c + i * n, b + p * n, a[i * k + p], n);
  }
}

// C += A B^T with A [m,k], B [n,k].
void matmul_abt_add(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  if (use_gemm(m, k, n)) {
    MapMat(c, m, n).noalias() += MapConstMat(a, m, k) * MapConstMat(b, n, k).transpose();
    return;
  }
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

// C (+)= A^T B with A [k,m], B [k,n].
void matmul_atb(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
  if (use_gemm(m, k, n)) {
    MapMat C(c, m, n);
    if (accumulate) {
      C.noalias() += MapConstMat(a, k, m).transpose() * MapConstMat(b, k, n);
    } else {
      C.noalias() = MapConstMat(a, k, m).transpose() * MapConstMat(b, k, n);
    }
    return;
  }
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  for (std::int64_t p = 0; p < k; ++p) {
    for (std::int64_t i = 0; i < m; ++i) axpy(c + i * n, b + p * n, a[p * m + i], n);
  }
}

struct ConvGeometry {
  int channels, height, width;
  int kernel, stride, padding;
  int out_height, out_width;

  int patch() const { return channels * kernel * kernel; }
  int positions() const { return out_height * out_width; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

ConvGeometry conv_geometry(const Shape& in, const Layer& layer) {
  ConvGeometry g{};
  g.channels = static_cast<int>(in[0]);
  g.height = static_cast<int>(in[1]);
  g.width = static_cast<int>(in[2]);
  g.kernel = layer.kernel;
  g.stride = layer.stride;
  g.padding = layer.padding;
  g.out_height = (g.height + 2 * g.padding - g.kernel) / g.stride + 1;
  g.out_width = (g.width + 2 * g.padding - g.kernel) / g.stride + 1;
  return g;
}

// col is [patch, positions], row-major.
void im2col(const ConvGeometry& g, const float* in, float* col) {
  const int positions = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        float* row = col + static_cast<std::ptrdiff_t>((c * g.kernel + ki) * g.kernel + kj) * positions;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          float* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_width, 0.0f);
            continue;
          }
          const float* src = in + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix < 0 || ix >= g.width) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* col, float* in) {
  const int positions = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const float* row = col + static_cast<std::ptrdiff_t>((c * g.kernel + ki) * g.kernel + kj) * positions;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          float* dst = in + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          const float* src = row + oy * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Shape with_batch(std::int64_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

std::string node_label(std::size_t index, const Layer& layer) {
  return "node " + std::to_string(index) + " (" + std::string(layer_kind_name(layer.kind)) + ")";
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "max_pool2d";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
    case LayerKind::kAddSkip: return "add_skip";
    case LayerKind::kConcat: return "concat_branch";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::kInput, LayerKind::kConv2d, LayerKind::kDense, LayerKind::kRelu, LayerKind::kMaxPool2d,
                 LayerKind::kGlobalAvgPool, LayerKind::kAddSkip, LayerKind::kConcat, LayerKind::kFlatten}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Forward

void Model::check_input(const Tensor& batch) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw ContractError(name_ + ": node 0 (input) expects [B," + shape_string(input_shape_).substr(1) + " but got " +
                        shape_string(batch.shape()));
  }
}

void Model::set_normalization(Normalization norm) {
  const auto channels = static_cast<std::size_t>(input_shape_.at(0));
  if (norm.mean.size() != channels || norm.stddev.size() != channels) {
    throw ContractError(name_ + ": normalization needs " + std::to_string(channels) + " channels");
  }
  for (float s : norm.stddev) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw ContractError(name_ + ": normalization stddev must be positive");
  }
  normalization_ = std::move(norm);
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

ParamGrads Model::zero_grads() const {
  ParamGrads g;
  g.reserve(parameters_.size());
  for (const auto& p : parameters_) g.emplace_back(p.value.shape());
  return g;
}

ForwardTrace Model::trace(const Tensor& batch) const {
  check_input(batch);
  const std::int64_t B = batch.dim(0);
  ForwardTrace tr;
  tr.activations_.resize(layers_.size());
  tr.argmax_.resize(layers_.size());

  // Node 0 holds the normalized input.
  {
    Tensor x = batch;
    const auto channels = normalization_.mean.size();
    const auto per_sample = static_cast<std::size_t>(x.sample_size());
    const auto block = per_sample / channels;
    for (std::int64_t b = 0; b < B; ++b) {
      auto s = x.sample(b);
      for (std::size_t c = 0; c < channels; ++c) {
        const float m = normalization_.mean[c];
        const float sd = normalization_.stddev[c];
        for (std::size_t i = c * block; i < (c + 1) * block; ++i) s[i] = (s[i] - m) / sd;
      }
    }
    tr.activations_[0] = std::move(x);
  }

  std::vector<float> col;
  for (std::size_t n = 1; n < layers_.size(); ++n) {
    const Layer& L = layers_[n];
    const Tensor& in = tr.activations_[static_cast<std::size_t>(L.inputs[0])];
    Tensor out(with_batch(B, L.out_shape));
    const auto out_n = out.sample_size();

    switch (L.kind) {
      case LayerKind::kConv2d: {
        const Shape& in_shape = layers_[static_cast<std::size_t>(L.inputs[0])].out_shape;
        const auto g = conv_geometry(in_shape, L);
        const Tensor& w = parameters_[static_cast<std::size_t>(L.weight)].value;
        const Tensor& bias = parameters_[static_cast<std::size_t>(L.bias)].value;
        if (!g.is_pointwise()) col.resize(static_cast<std::size_t>(g.patch()) * g.positions());
        for (std::int64_t b = 0; b < B; ++b) {
          const float* x = in.sample(b).data();
          if (!g.is_pointwise()) {
            im2col(g, x, col.data());
            x = col.data();
          }
          float* y = out.sample(b).data();
          matmul(w.raw(), x, y, L.out_features, g.patch(), g.positions(), false);
          for (int o = 0; o < L.out_features; ++o) {
            float* yo = y + static_cast<std::ptrdiff_t>(o) * g.positions();
            for (int p = 0; p < g.positions(); ++p) yo[p] += bias[static_cast<std::size_t>(o)];
          }
        }
        break;
      }
      case LayerKind::kDense: {
        const Tensor& w = parameters_[static_cast<std::size_t>(L.weight)].value;
        const Tensor& bias = parameters_[static_cast<std::size_t>(L.bias)].value;
        const auto in_n = in.sample_size();
        for (std::int64_t b = 0; b < B; ++b) {
          const float* x = in.sample(b).data();
          float* y = out.sample(b).data();
          for (int o = 0; o < L.out_features; ++o) {
            y[o] = dot(w.raw() + static_cast<std::ptrdiff_t>(o) * in_n, x, in_n) + bias[static_cast<std::size_t>(o)];
          }
        }
        break;
      }
      case LayerKind::kRelu: {
        const auto src = in.data();
        auto dst = out.data();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
        break;
      }
      case LayerKind::kMaxPool2d: {
        const Shape& s = layers_[static_cast<std::size_t>(L.inputs[0])].out_shape;
        const int C = static_cast<int>(s[0]), H = static_cast<int>(s[1]), W = static_cast<int>(s[2]);
        const int Ho = static_cast<int>(L.out_shape[1]), Wo = static_cast<int>(L.out_shape[2]);
        auto& arg = tr.argmax_[n];
        arg.resize(static_cast<std::size_t>(B * out_n));
        for (std::int64_t b = 0; b < B; ++b) {
          const float* x = in.sample(b).data();
          float* y = out.sample(b).data();
          std::int32_t* a = arg.data() + b * out_n;
          for (int c = 0; c < C; ++c) {
            for (int oy = 0; oy < Ho; ++oy) {
              for (int ox = 0; ox < Wo; ++ox) {
                int best = (c * H + oy * L.stride) * W + ox * L.stride;
                for (int ki = 0; ki < L.kernel; ++ki) {
                  for (int kj = 0; kj < L.kernel; ++kj) {
                    const int idx = (c * H + oy * L.stride + ki) * W + ox * L.stride + kj;
                    if (x[idx] > x[best]) best = idx;
                  }
                }
                const int o = (c * Ho + oy) * Wo + ox;
                y[o] = x[best];
                a[o] = best;
              }
            }
          }
        }
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        const Shape& s = layers_[static_cast<std::size_t>(L.inputs[0])].out_shape;
        const auto C = s[0];
        const auto hw = s[1] * s[2];
        for (std::int64_t b = 0; b < B; ++b) {
          const float* x = in.sample(b).data();
          float* y = out.sample(b).data();
          for (std::int64_t c = 0; c < C; ++c) {
            float acc = 0.0f;
            for (std::int64_t i = 0; i < hw; ++i) acc += x[c * hw + i];
            y[c] = acc / static_cast<float>(hw);
          }
        }
        break;
      }
      case LayerKind::kAddSkip: {
        const Tensor& other = tr.activations_[static_cast<std::size_t>(L.inputs[1])];
        const auto a = in.data();
        const auto c = other.data();
        auto dst = out.data();
        for (std::size_t i = 0; i < a.size(); ++i) dst[i] = a[i] + c[i];
        break;
      }
      case LayerKind::kConcat: {
        for (std::int64_t b = 0; b < B; ++b) {
          float* y = out.sample(b).data();
          for (int src : L.inputs) {
            const auto part = tr.activations_[static_cast<std::size_t>(src)].sample(b);
            y = std::copy(part.begin(), part.end(), y);
          }
        }
        break;
      }
      case LayerKind::kFlatten: {
        std::copy(in.data().begin(), in.data().end(), out.data().begin());
        break;
      }
      case LayerKind::kInput:
        throw ContractError(name_ + ": " + node_label(n, L) + " is an input node past position 0");
    }
    tr.activations_[n] = std::move(out);
  }
  return tr;
}

Tensor Model::forward(const Tensor& batch) const {
  auto tr = trace(batch);
  return std::move(tr.activations_.back());
}

// ---------------------------------------------------------------------------
// Backward

void Model::backward(const ForwardTrace& tr, const Tensor& grad_logits, ParamGrads* param_grads,
                     Tensor* input_grad) const {
  if (grad_logits.shape() != tr.logits().shape()) {
    throw ContractError(name_ + ": logit gradient shape " + shape_string(grad_logits.shape()) +
                        " does not match logits " + shape_string(tr.logits().shape()));
  }
  if (param_grads != nullptr && param_grads->size() != parameters_.size()) {
    throw ContractError(name_ + ": parameter gradient set has the wrong size");
  }
  const std::int64_t B = grad_logits.dim(0);
  std::vector<Tensor> grads(layers_.size());
  grads.back() = grad_logits;

  auto wants = [&](int node) { return node != 0 || input_grad != nullptr; };
  auto slot = [&](int node) -> Tensor& {
    auto& g = grads[static_cast<std::size_t>(node)];
    if (g.empty()) g = Tensor(with_batch(B, layers_[static_cast<std::size_t>(node)].out_shape));
    return g;
  };

  std::vector<float> col;
  std::vector<float> dcol;
  for (std::size_t n = layers_.size() - 1; n >= 1; --n) {
    const Layer& L = layers_[n];
    if (grads[n].empty()) continue;
    const Tensor& dy = grads[n];
    const int src = L.inputs[0];
    const Tensor& x = tr.activations_[static_cast<std::size_t>(src)];

    switch (L.kind) {
      case LayerKind::kConv2d: {
        const auto g = conv_geometry(layers_[static_cast<std::size_t>(src)].out_shape, L);
        const Tensor& w = parameters_[static_cast<std::size_t>(L.weight)].value;
        const bool need_dx = wants(src);
        Tensor* dx = need_dx ? &slot(src) : nullptr;
        if (!g.is_pointwise()) {
          col.resize(static_cast<std::size_t>(g.patch()) * g.positions());
          dcol.resize(col.size());
        }
        for (std::int64_t b = 0; b < B; ++b) {
          const float* dY = dy.sample(b).data();
          if (param_grads != nullptr) {
            const float* xc = x.sample(b).data();
            if (!g.is_pointwise()) {
              im2col(g, xc, col.data());
              xc = col.data();
            }
            matmul_abt_add(dY, xc, (*param_grads)[static_cast<std::size_t>(L.weight)].raw(), L.out_features,
                           g.positions(), g.patch());
            float* db = (*param_grads)[static_cast<std::size_t>(L.bias)].raw();
            for (int o = 0; o < L.out_features; ++o) {
              const float* row = dY + static_cast<std::ptrdiff_t>(o) * g.positions();
              float acc = 0.0f;
              for (int p = 0; p < g.positions(); ++p) acc += row[p];
              db[o] += acc;
            }
          }
          if (dx != nullptr) {
            if (g.is_pointwise()) {
              matmul_atb(w.raw(), dY, dx->sample(b).data(), g.patch(), L.out_features, g.positions(), true);
            } else {
              matmul_atb(w.raw(), dY, dcol.data(), g.patch(), L.out_features, g.positions(), false);
              col2im_add(g, dcol.data(), dx->sample(b).data());
            }
          }
        }
        break;
      }
      case LayerKind::kDense: {
        const Tensor& w = parameters_[static_cast<std::size_t>(L.weight)].value;
        const auto in_n = x.sample_size();
        Tensor* dx = wants(src) ? &slot(src) : nullptr;
        for (std::int64_t b = 0; b < B; ++b) {
          const float* g = dy.sample(b).data();
          const float* xs = x.sample(b).data();
          if (param_grads != nullptr) {
            float* dW = (*param_grads)[static_cast<std::size_t>(L.weight)].raw();
            float* db = (*param_grads)[static_cast<std::size_t>(L.bias)].raw();
            for (int o = 0; o < L.out_features; ++o) {
              axpy(dW + static_cast<std::ptrdiff_t>(o) * in_n, xs, g[o], in_n);
              db[o] += g[o];
            }
          }
          if (dx != nullptr) {
            float* dxs = dx->sample(b).data();
            for (int o = 0; o < L.out_features; ++o) axpy(dxs, w.raw() + static_cast<std::ptrdiff_t>(o) * in_n, g[o], in_n);
          }
        }
        break;
      }
      case LayerKind::kRelu: {
        if (!wants(src)) break;
        const auto y = tr.activations_[n].data();
        const auto g = dy.data();
        auto dx = slot(src).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (y[i] > 0.0f) dx[i] += g[i];
        }
        break;
      }
      case LayerKind::kMaxPool2d: {
        if (!wants(src)) break;
        const auto& arg = tr.argmax_[n];
        Tensor& dx = slot(src);
        const auto out_n = dy.sample_size();
        for (std::int64_t b = 0; b < B; ++b) {
          const float* g = dy.sample(b).data();
          float* d = dx.sample(b).data();
          const std::int32_t* a = arg.data() + b * out_n;
          for (std::int64_t o = 0; o < out_n; ++o) d[a[o]] += g[o];
        }
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        if (!wants(src)) break;
        const Shape& s = layers_[static_cast<std::size_t>(src)].out_shape;
        const auto C = s[0];
        const auto hw = s[1] * s[2];
        const float inv = 1.0f / static_cast<float>(hw);
        Tensor& dx = slot(src);
        for (std::int64_t b = 0; b < B; ++b) {
          const float* g = dy.sample(b).data();
          float* d = dx.sample(b).data();
          for (std::int64_t c = 0; c < C; ++c) {
            const float v = g[c] * inv;
            for (std::int64_t i = 0; i < hw; ++i) d[c * hw + i] += v;
          }
        }
        break;
      }
      case LayerKind::kAddSkip: {
        for (int input : L.inputs) {
          if (!wants(input)) continue;
          auto d = slot(input).data();
          const auto g = dy.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        break;
      }
      case LayerKind::kConcat: {
        std::int64_t offset = 0;
        for (int input : L.inputs) {
          const auto part_n = shape_size(layers_[static_cast<std::size_t>(input)].out_shape);
          if (wants(input)) {
            Tensor& d = slot(input);
            for (std::int64_t b = 0; b < B; ++b) {
              const float* g = dy.sample(b).data() + offset;
              float* dst = d.sample(b).data();
              for (std::int64_t i = 0; i < part_n; ++i) dst[i] += g[i];
            }
          }
          offset += part_n;
        }
        break;
      }
      case LayerKind::kFlatten: {
        if (!wants(src)) break;
        auto d = slot(src).data();
        const auto g = dy.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        break;
      }
      case LayerKind::kInput:
        break;
    }
    grads[n] = Tensor();  // release early
  }

  if (input_grad != nullptr) {
    Tensor dx = grads[0].empty() ? Tensor(with_batch(B, input_shape_)) : std::move(grads[0]);
    const auto channels = normalization_.stddev.size();
    const auto block = static_cast<std::size_t>(dx.sample_size()) / channels;
    for (std::int64_t b = 0; b < B; ++b) {
      auto s = dx.sample(b);
      for (std::size_t c = 0; c < channels; ++c) {
        const float sd = normalization_.stddev[c];
        for (std::size_t i = c * block; i < (c + 1) * block; ++i) s[i] /= sd;
      }
    }
    *input_grad = std::move(dx);
  }
}

ParamGrads Model::param_gradients(const Tensor& batch, const Tensor& grad_logits) const {
  auto tr = trace(batch);
  auto grads = zero_grads();
  backward(tr, grad_logits, &grads, nullptr);
  return grads;
}

Tensor Model::input_gradient(const Tensor& batch, const Tensor& grad_logits) const {
  auto tr = trace(batch);
  Tensor dx;
  backward(tr, grad_logits, nullptr, &dx);
  return dx;
}

Tensor Model::input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const {
  auto tr = trace(batch);
  Tensor dx;
  backward(tr, loss_grad(tr.logits()), nullptr, &dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Descriptor, hashing, initialization

std::string Model::descriptor() const {
  std::ostringstream out;
  out << "kdadv-arch 1\n";
  out << "name " << name_ << '\n';
  out << "input";
  for (auto d : input_shape_) out << ' ' << d;
  out << "\nclasses " << num_classes_ << '\n';
  for (std::size_t n = 1; n < layers_.size(); ++n) {
    const Layer& L = layers_[n];
    out << "node " << n << ' ' << layer_kind_name(L.kind) << " in";
    for (int i : L.inputs) out << ' ' << i;
    switch (L.kind) {
      case LayerKind::kConv2d:
        out << " out " << L.out_features << " kernel " << L.kernel << " stride " << L.stride << " pad " << L.padding;
        break;
      case LayerKind::kDense:
        out << " out " << L.out_features;
        break;
      case LayerKind::kMaxPool2d:
        out << " kernel " << L.kernel << " stride " << L.stride;
        break;
      default:
        break;
    }
    out << '\n';
  }
  out << "output " << layers_.size() - 1 << '\n';
  return out.str();
}

std::uint64_t Model::architecture_hash() const { return fnv1a(descriptor()); }

Model Model::from_descriptor(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [](const std::string& why) -> FormatError { return FormatError("architecture descriptor: " + why); };

  if (!std::getline(in, line) || line != "kdadv-arch 1") throw fail("bad header '" + line + "'");
  std::string name;
  Shape input_shape;
  int classes = 0;
  std::vector<std::string> node_lines;
  int output = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> name;
    } else if (key == "input") {
      std::int64_t d;
      while (ls >> d) input_shape.push_back(d);
    } else if (key == "classes") {
      ls >> classes;
    } else if (key == "node") {
      node_lines.push_back(line);
    } else if (key == "output") {
      ls >> output;
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (name.empty() || input_shape.empty() || classes <= 0) throw fail("missing name, input or classes");

  ModelBuilder builder(name, input_shape, classes);
  for (std::size_t i = 0; i < node_lines.size(); ++i) {
    std::istringstream ls(node_lines[i]);
    std::string key, kind_name, tok;
    std::size_t index = 0;
    ls >> key >> index >> kind_name;
    if (index != i + 1) throw fail("node indices out of order at '" + node_lines[i] + "'");
    const LayerKind kind = parse_layer_kind(kind_name);
    ls >> tok;
    if (tok != "in") throw fail("expected 'in' in '" + node_lines[i] + "'");
    std::vector<int> ins;
    int out = 0, kernel = 0, stride = 1, pad = 0;
    while (ls >> tok) {
      if (tok == "out") {
        ls >> out;
      } else if (tok == "kernel") {
        ls >> kernel;
      } else if (tok == "stride") {
        ls >> stride;
      } else if (tok == "pad") {
        ls >> pad;
      } else {
        ins.push_back(std::stoi(tok));
      }
    }
    if (ins.empty()) throw fail("node without inputs: '" + node_lines[i] + "'");
    switch (kind) {
      case LayerKind::kConv2d: builder.conv2d(ins[0], out, kernel, stride, pad); break;
      case LayerKind::kDense: builder.dense(ins[0], out); break;
      case LayerKind::kRelu: builder.relu(ins[0]); break;
      case LayerKind::kMaxPool2d: builder.max_pool2d(ins[0], kernel, stride); break;
      case LayerKind::kGlobalAvgPool: builder.global_avg_pool(ins[0]); break;
      case LayerKind::kAddSkip:
        if (ins.size() != 2) throw fail("add_skip needs two inputs");
        builder.add(ins[0], ins[1]);
        break;
      case LayerKind::kConcat: builder.concat(ins); break;
      case LayerKind::kFlatten: builder.flatten(ins[0]); break;
      case LayerKind::kInput: throw fail("input node listed explicitly");
    }
  }
  if (output != static_cast<int>(node_lines.size())) throw fail("output must be the last node");
  Model m = builder.build(0);
  for (auto& p : m.parameters_) p.value.fill(0.0f);
  return m;
}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& L : layers_) {
    if (L.weight < 0) continue;
    Tensor& w = parameters_[static_cast<std::size_t>(L.weight)].value;
    const auto fan_in = static_cast<double>(w.size()) / static_cast<double>(w.dim(0));
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (auto& v : w.data()) v = dist(rng);
    parameters_[static_cast<std::size_t>(L.bias)].value.fill(0.0f);
  }
}

// ---------------------------------------------------------------------------
// Builder

ModelBuilder::ModelBuilder(std::string name, Shape input_shape, int num_classes) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw ContractError("model name must be a non-empty token");
  }
  if (num_classes <= 0) throw ContractError("num_classes must be positive");
  shape_size(input_shape);
  model_.name_ = std::move(name);
  model_.input_shape_ = input_shape;
  model_.num_classes_ = num_classes;
  const auto channels = static_cast<std::size_t>(input_shape.at(0));
  model_.normalization_ = Normalization{std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f)};
  Layer in;
  in.kind = LayerKind::kInput;
  in.out_shape = std::move(input_shape);
  model_.layers_.push_back(std::move(in));
}

const Layer& ModelBuilder::node(int i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= model_.layers_.size()) {
    throw ContractError(model_.name_ + ": reference to unknown node " + std::to_string(i));
  }
  return model_.layers_[static_cast<std::size_t>(i)];
}

int ModelBuilder::push(Layer layer) {
  model_.layers_.push_back(std::move(layer));
  return static_cast<int>(model_.layers_.size() - 1);
}

int ModelBuilder::conv2d(int in, int out_channels, int kernel, int stride, int padding) {
  const Shape& s = node(in).out_shape;
  const auto idx = model_.layers_.size();
  if (s.size() != 3) throw ContractError(model_.name_ + ": node " + std::to_string(idx) + " (conv2d) needs a [C,H,W] input");
  if (out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
    throw ContractError(model_.name_ + ": node " + std::to_string(idx) + " (conv2d) has invalid hyperparameters");
  }
  Layer L;
  L.kind = LayerKind::kConv2d;
  L.inputs = {in};
  L.out_features = out_channels;
  L.kernel = kernel;
  L.stride = stride;
  L.padding = padding;
  const auto g = conv_geometry(s, L);
  if (g.out_height <= 0 || g.out_width <= 0) {
    throw ContractError(model_.name_ + ": node " + std::to_string(idx) + " (conv2d) produces an empty map");
  }
  L.out_shape = {out_channels, g.out_height, g.out_width};
  const std::string prefix = "n" + std::to_string(idx) + ".conv2d.";
  L.weight = static_cast<int>(model_.parameters_.size());
  model_.parameters_.push_back({prefix + "weight", Tensor({out_channels, s[0], kernel, kernel})});
  L.bias = static_cast<int>(model_.parameters_.size());
  model_.parameters_.push_back({prefix + "bias", Tensor({out_channels})});
  return push(std::move(L));
}

int ModelBuilder::dense(int in, int out_features) {
  const auto idx = model_.layers_.size();
  if (out_features <= 0) throw ContractError(model_.name_ + ": node " + std::to_string(idx) + " (dense) needs out > 0");
  const auto in_n = shape_size(node(in).out_shape);
  Layer L;
  L.kind = LayerKind::kDense;
  L.inputs = {in};
  L.out_features = out_features;
  L.out_shape = {out_features};
  const std::string prefix = "n" + std::to_string(idx) + ".dense.";
  L.weight = static_cast<int>(model_.parameters_.size());
  model_.parameters_.push_back({prefix + "weight", Tensor({out_features, in_n})});
  L.bias = static_cast<int>(model_.parameters_.size());
  model_.parameters_.push_back({prefix + "bias", Tensor({out_features})});
  return push(std::move(L));
}

int ModelBuilder::relu(int in) {
  Layer L;
  L.kind = LayerKind::kRelu;
  L.inputs = {in};
  L.out_shape = node(in).out_shape;
  return push(std::move(L));
}

int ModelBuilder::max_pool2d(int in, int kernel, int stride) {
  const Shape& s = node(in).out_shape;
  const auto idx = model_.layers_.size();
  if (s.size() != 3 || kernel <= 0 || stride <= 0 || s[1] < kernel || s[2] < kernel) {
    throw ContractError(model_.name_ + ": node " + std::to_string(idx) + " (max_pool2d) invalid for input " +
                        shape_string(s));
  }
  Layer L;
  L.kind = LayerKind::kMaxPool2d;
  L.inputs = {in};
  L.kernel = kernel;
  L.stride = stride;
  L.out_shape = {s[0], (s[1] - kernel) / stride + 1, (s[2] - kernel) / stride + 1};
  return push(std::move(L));
}

int ModelBuilder::global_avg_pool(int in) {
  const Shape& s = node(in).out_shape;
  if (s.size() != 3) {
    throw ContractError(model_.name_ + ": node " + std::to_string(model_.layers_.size()) +
                        " (global_avg_pool) needs a [C,H,W] input");
  }
  Layer L;
  L.kind = LayerKind::kGlobalAvgPool;
  L.inputs = {in};
  L.out_shape = {s[0]};
  return push(std::move(L));
}

int ModelBuilder::add(int a, int b) {
  if (node(a).out_shape != node(b).out_shape) {
    throw ContractError(model_.name_ + ": node " + std::to_string(model_.layers_.size()) + " (add_skip) operand shapes " +
                        shape_string(node(a).out_shape) + " and " + shape_string(node(b).out_shape) + " differ");
  }
  Layer L;
  L.kind = LayerKind::kAddSkip;
  L.inputs = {a, b};
  L.out_shape = node(a).out_shape;
  return push(std::move(L));
}

int ModelBuilder::concat(std::vector<int> ins) {
  const auto idx = std::to_string(model_.layers_.size());
  if (ins.empty()) throw ContractError(model_.name_ + ": node " + idx + " (concat_branch) needs inputs");
  Shape out = node(ins[0]).out_shape;
  if (out.size() != 3) throw ContractError(model_.name_ + ": node " + idx + " (concat_branch) needs [C,H,W] inputs");
  for (std::size_t i = 1; i < ins.size(); ++i) {
    const Shape& s = node(ins[i]).out_shape;
    if (s.size() != 3 || s[1] != out[1] || s[2] != out[2]) {
      throw ContractError(model_.name_ + ": node " + idx + " (concat_branch) spatial dims differ: " +
                          shape_string(s) + " vs " + shape_string(out));
    }
    out[0] += s[0];
  }
  Layer L;
  L.kind = LayerKind::kConcat;
  L.inputs = std::move(ins);
  L.out_shape = std::move(out);
  return push(std::move(L));
}

int ModelBuilder::flatten(int in) {
  Layer L;
  L.kind = LayerKind::kFlatten;
  L.inputs = {in};
  L.out_shape = {shape_size(node(in).out_shape)};
  return push(std::move(L));
}

Model ModelBuilder::build(std::uint64_t seed) {
  const Layer& last = model_.layers_.back();
  if (model_.layers_.size() < 2 || last.out_shape != Shape{model_.num_classes_}) {
    throw ContractError(model_.name_ + ": last node must produce [" + std::to_string(model_.num_classes_) + "] logits");
  }
  Model m = model_;
  m.initialize(seed);
  return m;
}

}  // namespace kdadv
