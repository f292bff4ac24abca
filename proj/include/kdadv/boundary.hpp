#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kdadv/classifier.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

struct SliceDirections {
  Tensor u;  // unit l2 norm, image shape [C,H,W]
  Tensor v;  // unit l2 norm, orthogonal to u
};

// u is the normalized cross-entropy input gradient of `model` at (x, label);
// v is a seeded Gaussian vector with its u component removed, normalized.
// Throws ContractError when the gradient vanishes.
SliceDirections slice_directions(const Classifier& model, const Tensor& x, int label, std::uint64_t seed);

struct ModelGrid {
  std::string model;
  std::vector<int> classes;         // resolution^2 entries, index i * resolution + j
  std::vector<std::uint8_t> correct;  // class == label
};

struct BoundarySlice {
  Tensor anchor;  // [C,H,W]
  int label = 0;
  Tensor u, v;
  double range = 0.0;
  int resolution = 0;
  std::vector<ModelGrid> grids;

  // Coordinate of grid index i along either axis: spaced evenly over [-range, range].
  double coord(int i) const;
};

// Grid point (i, j) is clip(x + coord(i) * u + coord(j) * v, 0, 255); every
// model's argmax class is recorded there.
BoundarySlice boundary_grid(std::span<const Classifier* const> models, const Tensor& x, int label,
                            const SliceDirections& dirs, double range, int resolution = 101,
                            std::size_t chunk = 512);

// Writes <stem>.csv (a,b,model,class,correct; one row per model and grid
// point) and one <stem>_<model>.ppm per model. Returns the written paths.
std::vector<std::filesystem::path> export_slice(const BoundarySlice& slice, const std::filesystem::path& directory,
                                                const std::string& stem);

// Rebuilds range, resolution and the per-model grids from an exported CSV.
BoundarySlice import_slice_csv(const std::filesystem::path& csv);

// Plain P3 pixmap: one pixel per grid cell, a along columns, b increasing upwards.
struct Pixmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};
Pixmap render_slice(const BoundarySlice& slice, std::size_t model_index);
void write_ppm(const Pixmap& image, const std::filesystem::path& path);
Pixmap read_ppm(const std::filesystem::path& path);

}  // namespace kdadv
