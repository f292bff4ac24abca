#include "kdadv/zoo.hpp"

#include <algorithm>
#include <set>

#include "kdadv/error.hpp"

namespace kdadv {
namespace {

class Widths {
 public:
  explicit Widths(ZooScale scale) : divisor_(scale == ZooScale::kTiny ? 4 : 1) {}
  int operator()(int channels) const { return std::max(2, channels / divisor_); }

 private:
  int divisor_;
};

int conv_relu(ModelBuilder& b, int in, int channels, int kernel, int stride = 1) {
  return b.relu(b.conv2d(in, channels, kernel, stride, kernel / 2));
}

int residual_block(ModelBuilder& b, int in, int channels) {
  const int a = conv_relu(b, in, channels, 3);
  const int c = b.conv2d(a, channels, 3, 1, 1);
  return b.relu(b.add(c, in));
}

int dense_block(ModelBuilder& b, int in, int growth, int layers) {
  int cur = in;
  for (int i = 0; i < layers; ++i) cur = b.concat({cur, conv_relu(b, cur, growth, 3)});
  return cur;
}

int multiscale_block(ModelBuilder& b, int in, int c1, int c3, int c5) {
  return b.concat({conv_relu(b, in, c1, 1), conv_relu(b, in, c3, 3), conv_relu(b, in, c5, 5)});
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kTeacherResidual: return "teacher-residual";
    case Role::kTeacherDense: return "teacher-dense";
    case Role::kStudentPlain: return "student-plain";
    case Role::kBlackboxMultibranch: return "blackbox-multibranch";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (auto r : {Role::kTeacherResidual, Role::kTeacherDense, Role::kStudentPlain, Role::kBlackboxMultibranch}) {
    if (role_name(r) == name) return r;
  }
  throw ConfigError("unknown architecture role '" + std::string(name) + "'");
}

std::string_view zoo_scale_name(ZooScale scale) { return scale == ZooScale::kTiny ? "tiny" : "full"; }

ZooScale parse_zoo_scale(std::string_view name) {
  if (name == "full") return ZooScale::kFull;
  if (name == "tiny") return ZooScale::kTiny;
  throw ConfigError("unknown zoo scale '" + std::string(name) + "'");
}

Model build(Role role, std::uint64_t seed, ZooScale scale, int num_classes, int image_size) {
  if (image_size < 16) throw ContractError("zoo architectures need images of at least 16x16");
  const Widths w(scale);
  ModelBuilder b(std::string(role_name(role)), {3, image_size, image_size}, num_classes);
  int h = conv_relu(b, b.input(), w(32), 3, 2);
  switch (role) {
    case Role::kStudentPlain:
      h = b.max_pool2d(conv_relu(b, h, w(48), 3), 2, 2);
      h = b.max_pool2d(conv_relu(b, h, w(128), 3), 2, 2);
      h = conv_relu(b, h, w(96), 3);
      break;
    case Role::kTeacherResidual:
      h = residual_block(b, h, w(32));
      h = residual_block(b, conv_relu(b, h, w(64), 3, 2), w(64));
      h = residual_block(b, conv_relu(b, h, w(128), 3, 2), w(128));
      break;
    case Role::kTeacherDense:
      h = dense_block(b, h, w(16), 2);
      h = b.max_pool2d(b.relu(b.conv2d(h, w(64), 1)), 2, 2);
      h = dense_block(b, h, w(32), 2);
      h = b.max_pool2d(b.relu(b.conv2d(h, w(128), 1)), 2, 2);
      h = dense_block(b, h, w(80), 2);
      break;
    case Role::kBlackboxMultibranch:
      h = b.max_pool2d(multiscale_block(b, h, w(16), w(16), w(8)), 2, 2);
      h = b.max_pool2d(multiscale_block(b, h, w(32), w(48), w(16)), 2, 2);
      h = multiscale_block(b, h, w(32), w(48), w(16));
      break;
  }
  b.dense(b.global_avg_pool(h), num_classes);
  return b.build(seed);
}

ArchitectureSpec architecture_spec(Role role, ZooScale scale) { return {role, build(role, 0, scale).descriptor()}; }

std::map<LayerKind, int> layer_kind_counts(const Model& model) {
  std::map<LayerKind, int> counts;
  for (const auto& L : model.layers()) {
    if (L.kind != LayerKind::kInput) ++counts[L.kind];
  }
  return counts;
}

bool has_multiscale_branch(const Model& model) {
  const auto layers = model.layers();
  // Follow relu wrappers back to the conv feeding each concat input.
  auto conv_kernel = [&](int node) {
    const Layer* L = &layers[static_cast<std::size_t>(node)];
    if (L->kind == LayerKind::kRelu) L = &layers[static_cast<std::size_t>(L->inputs[0])];
    return L->kind == LayerKind::kConv2d ? L->kernel : 0;
  };
  for (const auto& L : layers) {
    if (L.kind != LayerKind::kConcat) continue;
    std::set<int> kernels;
    for (int in : L.inputs) kernels.insert(conv_kernel(in));
    if (kernels.count(1) && kernels.count(3) && kernels.count(5)) return true;
  }
  return false;
}

}  // namespace kdadv
