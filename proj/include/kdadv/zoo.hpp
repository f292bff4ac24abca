#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "kdadv/model.hpp"

namespace kdadv {

// The four architecture roles of the experiment.
enum class Role { kTeacherResidual, kTeacherDense, kStudentPlain, kBlackboxMultibranch };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);

// kFull: the desk-scale sizes. kTiny: same topology at a quarter of the width,
// for smoke runs and fast tests.
enum class ZooScale { kFull, kTiny };

std::string_view zoo_scale_name(ZooScale scale);
ZooScale parse_zoo_scale(std::string_view name);

struct ArchitectureSpec {
  Role role;
  std::string layers;  // canonical descriptor text
};

// Freshly initialized model; identical seeds give bit-identical parameters.
// Input is [3, image_size, image_size]; the topology needs image_size >= 16.
Model build(Role role, std::uint64_t seed, ZooScale scale = ZooScale::kFull, int num_classes = 10,
            int image_size = 32);

ArchitectureSpec architecture_spec(Role role, ZooScale scale = ZooScale::kFull);

std::map<LayerKind, int> layer_kind_counts(const Model& model);

// True when some concat node joins parallel conv branches with 1x1, 3x3 and 5x5 kernels.
bool has_multiscale_branch(const Model& model);

}  // namespace kdadv
