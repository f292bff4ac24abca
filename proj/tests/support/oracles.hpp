#pragma once

// Test-only reference computations. Nothing here calls the reverse pass; the
// finite-difference oracles only use forward evaluations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "kdadv/model.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0;
}

// <weights, logits> accumulated in double: a linear probe whose gradient with
// respect to the logits is exactly `weights`.
inline double probe(const Model& m, const Tensor& x, const Tensor& weights) {
  const Tensor z = m.forward(x);
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += static_cast<double>(weights[i]) * z[i];
  return s;
}

// Which side of every ReLU kink and which max-pool winner each activation sits on.
inline std::vector<std::int32_t> activation_pattern(const Model& m, const Tensor& x) {
  const auto tr = m.trace(x);
  std::vector<std::int32_t> pattern;
  for (std::size_t n = 0; n < m.layers().size(); ++n) {
    const auto kind = m.layers()[n].kind;
    if (kind == LayerKind::kRelu) {
      const auto pre = tr.activation(static_cast<std::size_t>(m.layers()[n].inputs[0])).data();
      for (float v : pre) pattern.push_back(v > 0.0f ? 1 : 0);
    } else if (kind == LayerKind::kMaxPool2d) {
      const auto& w = tr.pool_winners(n);
      pattern.insert(pattern.end(), w.begin(), w.end());
    }
  }
  return pattern;
}

struct CentralDifference {
  double value = 0.0;
  bool smooth = true;  // false when +-h crosses a ReLU kink or flips a max-pool winner
};

// d probe / d (parameter `param`, element `index`) by central differences.
inline CentralDifference fd_parameter(Model m, const Tensor& x, const Tensor& weights, std::size_t param,
                                      std::size_t index, float h) {
  auto& v = m.parameters()[param].value[index];
  const float orig = v;
  const float hi = orig + h;
  const float lo = orig - h;
  v = hi;
  const double plus = probe(m, x, weights);
  const auto pat_plus = activation_pattern(m, x);
  v = lo;
  const double minus = probe(m, x, weights);
  const auto pat_minus = activation_pattern(m, x);
  v = orig;
  const auto pat = activation_pattern(m, x);
  // Divide by the step actually representable in float32.
  return {(plus - minus) / (static_cast<double>(hi) - lo), pat == pat_plus && pat == pat_minus};
}

// d f / d x[index] for a scalar function of the raw input. `h` is measured in
// normalized units: the raw step is h times the channel's stddev, so the
// stencil probes the same relative neighbourhood as a parameter step does.
inline CentralDifference fd_input(const Model& m, Tensor x, const std::function<double(const Tensor&)>& f,
                                  std::size_t index, float h) {
  const auto channels = m.normalization().stddev.size();
  const auto block = static_cast<std::size_t>(x.sample_size()) / channels;
  const auto channel = (index % static_cast<std::size_t>(x.sample_size())) / block;
  const float step = h * m.normalization().stddev[channel];
  const float orig = x[index];
  const float hi = orig + step;
  const float lo = orig - step;
  x[index] = hi;
  const double plus = f(x);
  const auto pat_plus = activation_pattern(m, x);
  x[index] = lo;
  const double minus = f(x);
  const auto pat_minus = activation_pattern(m, x);
  x[index] = orig;
  const auto pat = activation_pattern(m, x);
  return {(plus - minus) / (static_cast<double>(hi) - lo), pat == pat_plus && pat == pat_minus};
}

// |a - n| / max(|a|, |n|, floor). The floor keeps float32 evaluation noise on
// near-zero derivatives from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double rms(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(std::max<std::size_t>(1, t.size())));
}

// Double-precision re-implementation of Model::forward for one sample, written
// with plain loops from the layer definitions. Finite differences taken on it
// are free of float32 cancellation noise.
inline std::vector<double> reference_logits(const Model& m, std::span<const double> x) {
  const auto& layers = m.layers();
  const auto& norm = m.normalization();
  std::vector<std::vector<double>> act(layers.size());
  const auto channels = norm.stddev.size();
  act[0].assign(x.begin(), x.end());
  if (channels > 0) {
    const std::size_t block = x.size() / channels;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t c = i / block;
      act[0][i] = (x[i] - norm.mean[c]) / norm.stddev[c];
    }
  }
  for (std::size_t n = 1; n < layers.size(); ++n) {
    const Layer& L = layers[n];
    const auto& in = act[static_cast<std::size_t>(L.inputs[0])];
    const Shape& is = layers[static_cast<std::size_t>(L.inputs[0])].out_shape;
    auto& out = act[n];
    out.assign(static_cast<std::size_t>(shape_size(L.out_shape)), 0.0);
    switch (L.kind) {
      case LayerKind::kConv2d: {
        const auto& w = m.parameters()[static_cast<std::size_t>(L.weight)].value;
        const auto& b = m.parameters()[static_cast<std::size_t>(L.bias)].value;
        const int C = static_cast<int>(is[0]), H = static_cast<int>(is[1]), W = static_cast<int>(is[2]);
        const int O = static_cast<int>(L.out_shape[0]), OH = static_cast<int>(L.out_shape[1]),
                  OW = static_cast<int>(L.out_shape[2]);
        const int k = L.kernel;
        for (int o = 0; o < O; ++o) {
          double* dst = &out[static_cast<std::size_t>(o) * OH * OW];
          for (int i = 0; i < OH * OW; ++i) dst[i] = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const double wv = w[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
                for (int oy = 0; oy < OH; ++oy) {
                  const int iy = oy * L.stride - L.padding + ky;
                  if (iy < 0 || iy >= H) continue;
                  const double* src = &in[(static_cast<std::size_t>(c) * H + iy) * W];
                  for (int ox = 0; ox < OW; ++ox) {
                    const int ix = ox * L.stride - L.padding + kx;
                    if (ix >= 0 && ix < W) dst[oy * OW + ox] += wv * src[ix];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::kDense: {
        const auto& w = m.parameters()[static_cast<std::size_t>(L.weight)].value;
        const auto& b = m.parameters()[static_cast<std::size_t>(L.bias)].value;
        for (std::size_t o = 0; o < out.size(); ++o) {
          double s = b[o];
          for (std::size_t i = 0; i < in.size(); ++i) s += static_cast<double>(w[o * in.size() + i]) * in[i];
          out[o] = s;
        }
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
      case LayerKind::kMaxPool2d: {
        const int C = static_cast<int>(is[0]), H = static_cast<int>(is[1]), W = static_cast<int>(is[2]);
        const int OH = static_cast<int>(L.out_shape[1]), OW = static_cast<int>(L.out_shape[2]);
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              double best = -std::numeric_limits<double>::infinity();
              for (int ky = 0; ky < L.kernel; ++ky) {
                for (int kx = 0; kx < L.kernel; ++kx) {
                  best = std::max(best, in[(static_cast<std::size_t>(c) * H + oy * L.stride + ky) * W + ox * L.stride + kx]);
                }
              }
              out[(static_cast<std::size_t>(c) * OH + oy) * OW + ox] = best;
            }
          }
        }
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        const std::size_t hw = in.size() / out.size();
        for (std::size_t c = 0; c < out.size(); ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += in[c * hw + i];
          out[c] = s / static_cast<double>(hw);
        }
        break;
      }
      case LayerKind::kAddSkip: {
        const auto& other = act[static_cast<std::size_t>(L.inputs[1])];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + other[i];
        break;
      }
      case LayerKind::kConcat: {
        std::size_t at = 0;
        for (int src : L.inputs) {
          const auto& part = act[static_cast<std::size_t>(src)];
          std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
          at += part.size();
        }
        break;
      }
      case LayerKind::kFlatten:
        out = in;
        break;
      case LayerKind::kInput:
        break;
    }
  }
  return act.back();
}

// <weights, reference logits> for a single-sample batch.
inline double reference_probe(const Model& m, std::span<const double> x, const Tensor& weights) {
  const auto z = reference_logits(m, x);
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += static_cast<double>(weights[i]) * z[i];
  return s;
}

}  // namespace kdadv::testing
