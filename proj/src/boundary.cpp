#include "kdadv/boundary.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "kdadv/error.hpp"
#include "kdadv/metrics.hpp"

namespace kdadv {

namespace {

Shape image_shape_of(const Tensor& x) {
  if (x.rank() == 4 && x.dim(0) == 1) return Shape(x.shape().begin() + 1, x.shape().end());
  if (x.rank() == 3) return x.shape();
  throw ContractError("slice anchor must be [C,H,W] or [1,C,H,W], got " + shape_string(x.shape()));
}

Tensor as_batch(const Tensor& x, const Shape& image) {
  Shape s{1};
  s.insert(s.end(), image.begin(), image.end());
  return Tensor(std::move(s), std::vector<float>(x.data().begin(), x.data().end()));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor unit_tensor(const Shape& shape, std::vector<double> v) {
  const double n = std::sqrt(dot(v, v));
  Tensor out(shape);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

// Class colors (a ten-entry qualitative palette, cycled for more classes).
constexpr std::uint8_t kPalette[10][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                          {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
                                          {188, 189, 34},  {23, 190, 207}};

std::string safe_file_part(const std::string& name) {
  std::string s = name;
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

}  // namespace

SliceDirections slice_directions(const Classifier& model, const Tensor& x, int label, std::uint64_t seed) {
  const Shape image = image_shape_of(x);
  const Tensor batch = as_batch(x, image);
  const int y[1] = {label};
  const Tensor g = loss_input_gradient(model, batch, y);

  std::vector<double> u(g.data().begin(), g.data().end());
  const double gn = std::sqrt(dot(u, u));
  if (!(gn > 0.0) || !std::isfinite(gn)) {
    throw ContractError("slice anchor has a zero loss gradient; pick another image");
  }
  for (double& e : u) e /= gn;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(u.size());
  for (int attempt = 0;; ++attempt) {
    for (double& e : v) e = normal(rng);
    const double vn = std::sqrt(dot(v, v));
    const double c = dot(u, v) / vn;
    if (std::abs(c) <= 1.0 - 1e-9) break;
    if (attempt > 100) throw ContractError("could not draw a direction independent of the gradient");
  }
  const double c = dot(u, v);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
  return {unit_tensor(image, std::move(u)), unit_tensor(image, std::move(v))};
}

double BoundarySlice::coord(int i) const {
  if (resolution < 2) return 0.0;
  return range * static_cast<double>(2 * i - (resolution - 1)) / static_cast<double>(resolution - 1);
}

BoundarySlice boundary_grid(std::span<const Classifier* const> models, const Tensor& x, int label,
                            const SliceDirections& dirs, double range, int resolution, std::size_t chunk) {
  if (resolution < 2) throw ContractError("slice resolution must be at least 2");
  if (models.empty()) throw ContractError("slice needs at least one model");
  const Shape image = image_shape_of(x);
  if (dirs.u.shape() != image || dirs.v.shape() != image) throw ContractError("slice directions do not match the anchor");
  for (const Classifier* m : models) {
    if (m->num_classes() != models.front()->num_classes()) throw ConfigError("slice models disagree on class count");
  }

  BoundarySlice s;
  s.anchor = Tensor(image, std::vector<float>(x.data().begin(), x.data().end()));
  s.label = label;
  s.u = dirs.u;
  s.v = dirs.v;
  s.range = range;
  s.resolution = resolution;

  const std::size_t points = static_cast<std::size_t>(resolution) * resolution;
  const std::size_t d = static_cast<std::size_t>(shape_size(image));
  for (const Classifier* m : models) s.grids.push_back({m->name(), std::vector<int>(points), std::vector<std::uint8_t>(points)});

  for (std::size_t begin = 0; begin < points; begin += chunk) {
    const std::size_t end = std::min(points, begin + chunk);
    Shape bs{static_cast<std::int64_t>(end - begin)};
    bs.insert(bs.end(), image.begin(), image.end());
    Tensor batch(std::move(bs));
    for (std::size_t p = begin; p < end; ++p) {
      const double a = s.coord(static_cast<int>(p / resolution));
      const double b = s.coord(static_cast<int>(p % resolution));
      auto dst = batch.sample(static_cast<std::int64_t>(p - begin));
      for (std::size_t k = 0; k < d; ++k) {
        const double val = static_cast<double>(s.anchor[k]) + a * s.u[k] + b * s.v[k];
        dst[k] = static_cast<float>(std::clamp(val, 0.0, 255.0));
      }
    }
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto preds = predict(*models[m], batch);
      for (std::size_t p = begin; p < end; ++p) {
        s.grids[m].classes[p] = preds[p - begin];
        s.grids[m].correct[p] = preds[p - begin] == label;
      }
    }
  }
  return s;
}

Pixmap render_slice(const BoundarySlice& slice, std::size_t model_index) {
  const ModelGrid& g = slice.grids.at(model_index);
  const int n = slice.resolution;
  Pixmap img{n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n * 3)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * n + j;
      const auto* c = kPalette[static_cast<std::size_t>(g.classes[p]) % 10];
      // Misclassified cells are darkened so the correct region stands out.
      const double shade = g.correct[p] ? 1.0 : 0.4;
      const std::size_t px = (static_cast<std::size_t>(n - 1 - j) * n + i) * 3;
      for (int k = 0; k < 3; ++k) img.rgb[px + k] = static_cast<std::uint8_t>(std::lround(c[k] * shade));
    }
  }
  return img;
}

void write_ppm(const Pixmap& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P3\n" << image.width << ' ' << image.height << "\n255\n";
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const std::size_t p = (static_cast<std::size_t>(r) * image.width + c) * 3;
      out << int(image.rgb[p]) << ' ' << int(image.rgb[p + 1]) << ' ' << int(image.rgb[p + 2])
          << (c + 1 == image.width ? '\n' : ' ');
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

Pixmap read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("pixmap " + path.string());
  std::string magic;
  int maxval = 0;
  Pixmap img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P3" || img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw FormatError(path.string() + ": not a plain 8-bit pixmap");
  }
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (auto& b : img.rgb) {
    int v = -1;
    if (!(in >> v) || v < 0 || v > 255) throw FormatError(path.string() + ": truncated or invalid pixel data");
    b = static_cast<std::uint8_t>(v);
  }
  return img;
}

std::vector<std::filesystem::path> export_slice(const BoundarySlice& slice, const std::filesystem::path& directory,
                                                const std::string& stem) {
  std::filesystem::create_directories(directory);
  std::vector<std::filesystem::path> written;
  const auto csv = directory / (stem + ".csv");
  {
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw Error("cannot write " + csv.string());
    out << "a,b,model,class,correct\n";
    char a_buf[40], b_buf[40];
    for (const auto& g : slice.grids) {
      if (g.model.find_first_of(",\n") != std::string::npos) throw ContractError("model name '" + g.model + "' contains a comma");
      for (int i = 0; i < slice.resolution; ++i) {
        std::snprintf(a_buf, sizeof a_buf, "%.17g", slice.coord(i));
        for (int j = 0; j < slice.resolution; ++j) {
          std::snprintf(b_buf, sizeof b_buf, "%.17g", slice.coord(j));
          const std::size_t p = static_cast<std::size_t>(i) * slice.resolution + j;
          out << a_buf << ',' << b_buf << ',' << g.model << ',' << g.classes[p] << ',' << int(g.correct[p]) << '\n';
        }
      }
    }
    if (!out) throw Error("failed writing " + csv.string());
  }
  written.push_back(csv);
  for (std::size_t m = 0; m < slice.grids.size(); ++m) {
    const auto ppm = directory / (stem + "_" + safe_file_part(slice.grids[m].model) + ".ppm");
    write_ppm(render_slice(slice, m), ppm);
    written.push_back(ppm);
  }
  return written;
}

BoundarySlice import_slice_csv(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw MissingArtifact("slice csv " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "a,b,model,class,correct") throw FormatError(csv.string() + ": bad header");

  struct Cell {
    double a, b;
    int cls, correct;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Cell>> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, model, cls, correct;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, model, ',') ||
        !std::getline(ls, cls, ',') || !std::getline(ls, correct)) {
      throw FormatError(csv.string() + ": malformed line " + std::to_string(line_no));
    }
    if (!cells.count(model)) order.push_back(model);
    cells[model].push_back({std::stod(a), std::stod(b), std::stoi(cls), std::stoi(correct)});
  }
  if (order.empty()) throw FormatError(csv.string() + ": no grid rows");

  BoundarySlice s;
  const auto n = cells[order.front()].size();
  s.resolution = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (static_cast<std::size_t>(s.resolution) * s.resolution != n || s.resolution < 2) {
    throw FormatError(csv.string() + ": " + std::to_string(n) + " rows per model is not a square grid");
  }
  s.range = -cells[order.front()].front().a;
  for (const auto& name : order) {
    const auto& cs = cells[name];
    if (cs.size() != n) throw FormatError(csv.string() + ": model " + name + " has a different grid size");
    ModelGrid g{name, std::vector<int>(n), std::vector<std::uint8_t>(n)};
    for (std::size_t p = 0; p < n; ++p) {
      g.classes[p] = cs[p].cls;
      g.correct[p] = static_cast<std::uint8_t>(cs[p].correct);
    }
    s.grids.push_back(std::move(g));
  }
  return s;
}

}  // namespace kdadv
