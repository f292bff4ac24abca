#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kdadv/boundary.hpp"
#include "kdadv/error.hpp"
#include "kdadv/loss.hpp"
#include "kdadv/model.hpp"
#include "oracles.hpp"

namespace kdadv {
namespace {

using testing::random_tensor;

Model small_convnet(std::uint64_t seed, int classes = 4) {
  ModelBuilder b("conv" + std::to_string(seed), {3, 8, 8}, classes);
  int h = b.relu(b.conv2d(b.input(), 6, 3, 1, 1));
  h = b.max_pool2d(h, 2, 2);
  b.dense(b.flatten(h), classes);
  Model m = b.build(seed);
  m.set_normalization({{128.0f, 128.0f, 128.0f}, {40.0f, 40.0f, 40.0f}});
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

TEST(SliceDirections, OrthonormalAndSeeded) {
  const Model m = small_convnet(1);
  const Tensor x = random_tensor({3, 8, 8}, 2, 20.0f, 230.0f);
  for (std::uint64_t seed : {0u, 1u, 7u}) {
    const auto d = slice_directions(m, x, 1, seed);
    EXPECT_NEAR(dot(d.u, d.u), 1.0, 1e-6);
    EXPECT_NEAR(dot(d.v, d.v), 1.0, 1e-6);
    EXPECT_LE(std::abs(dot(d.u, d.v)), 1e-6);
  }
  const auto a = slice_directions(m, x, 1, 5);
  const auto b = slice_directions(m, x, 1, 5);
  const auto c = slice_directions(m, x, 1, 6);
  EXPECT_TRUE(testing::bit_identical(a.v, b.v));
  EXPECT_FALSE(testing::bit_identical(a.v, c.v));
  EXPECT_TRUE(testing::bit_identical(a.u, c.u));
}

TEST(SliceDirections, GradientDirectionIgnoresLossScale) {
  const Model m = small_convnet(3);
  const Tensor x = random_tensor({1, 3, 8, 8}, 4, 20.0f, 230.0f);
  const std::vector<int> y = {2};
  const Tensor g = m.input_gradient(x, [&](const Tensor& z) {
    LossValue l = cross_entropy(z, y, Reduction::kSum);
    for (auto& v : l.grad.data()) v *= 7.5f;
    return l.grad;
  });
  const double n = std::sqrt(dot(g, g));
  const auto d = slice_directions(m, x, 2, 0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(d.u[i], g[i] / n, 1e-6);
}

TEST(SliceDirections, ZeroGradientIsAnError) {
  Model m = small_convnet(5);
  for (auto& p : m.parameters()) p.value.fill(0.0f);
  EXPECT_THROW(slice_directions(m, random_tensor({3, 8, 8}, 6, 0.0f, 255.0f), 0, 0), ContractError);
}

TEST(BoundaryGrid, ShapeAnchorAndZoomCoherence) {
  const Model a = small_convnet(7), b = small_convnet(8);
  const Tensor x = random_tensor({3, 8, 8}, 9, 20.0f, 230.0f);
  const auto dirs = slice_directions(a, x, 0, 3);
  const std::vector<const Classifier*> models = {&a, &b};
  const auto wide = boundary_grid(models, x, 0, dirs, 50.0, 101);
  const auto near = boundary_grid(models, x, 0, dirs, 6.0, 13);
  ASSERT_EQ(wide.grids.size(), 2u);
  EXPECT_EQ(wide.grids[0].classes.size(), 101u * 101u);
  EXPECT_EQ(wide.coord(0), -50.0);
  EXPECT_EQ(wide.coord(50), 0.0);
  EXPECT_EQ(wide.coord(100), 50.0);

  const Tensor batch = Tensor({1, 3, 8, 8}, std::vector<float>(x.data().begin(), x.data().end()));
  for (std::size_t m = 0; m < 2; ++m) {
    const int clean = predict(*models[m], batch)[0];
    EXPECT_EQ(wide.grids[m].classes[50 * 101 + 50], clean);
    EXPECT_EQ(near.grids[m].classes[6 * 13 + 6], clean);
    // Both grids hit the integer offsets -6..6; the classes there must agree.
    for (int i = 0; i < 13; ++i) {
      for (int j = 0; j < 13; ++j) {
        ASSERT_EQ(near.grids[m].classes[static_cast<std::size_t>(i * 13 + j)],
                  wide.grids[m].classes[static_cast<std::size_t>((i + 44) * 101 + (j + 44))]);
      }
    }
    for (std::size_t p = 0; p < wide.grids[m].classes.size(); ++p) {
      ASSERT_EQ(wide.grids[m].correct[p], wide.grids[m].classes[p] == 0);
    }
  }
}

// Two-class affine model: the correct region of any slice that avoids clipping
// is the half-plane alpha + beta_a * a + beta_b * b > 0 (class 1 being correct).
TEST(BoundaryGrid, LinearModelBoundaryIsAStraightLine) {
  ModelBuilder builder("linear", {3, 4, 4}, 2);
  builder.dense(builder.flatten(builder.input()), 2);
  Model m = builder.build(11);
  const Normalization norm{{120.0f, 128.0f, 136.0f}, {30.0f, 40.0f, 50.0f}};
  m.set_normalization(norm);
  const Tensor x({3, 4, 4}, 128.0f);
  const auto dirs = slice_directions(m, x, 1, 4);

  const Tensor& w = m.parameters()[0].value;  // [2, 48]
  const Tensor& bias = m.parameters()[1].value;
  double alpha = static_cast<double>(bias[1]) - bias[0], beta_a = 0.0, beta_b = 0.0;
  for (std::size_t k = 0; k < 48; ++k) {
    const std::size_t c = k / 16;
    const double wd = (static_cast<double>(w[48 + k]) - w[k]) / norm.stddev[c];
    alpha += wd * (x[k] - norm.mean[c]);
    beta_a += wd * dirs.u[k];
    beta_b += wd * dirs.v[k];
  }
  const double range = 20.0;
  const int g = 81;
  const std::vector<const Classifier*> models = {&m};
  const auto slice = boundary_grid(models, x, 1, dirs, range, g);
  ASSERT_GT(std::abs(beta_a), 1e-3);

  const double cell = 2.0 * range / (g - 1);
  int crossings = 0;
  for (int j = 0; j < g; ++j) {
    const double b = slice.coord(j);
    const double a_star = -(alpha + beta_b * b) / beta_a;
    for (int i = 0; i + 1 < g; ++i) {
      const bool c0 = slice.grids[0].correct[static_cast<std::size_t>(i * g + j)];
      const bool c1 = slice.grids[0].correct[static_cast<std::size_t>((i + 1) * g + j)];
      if (c0 != c1) {
        ++crossings;
        EXPECT_LE(std::abs(0.5 * (slice.coord(i) + slice.coord(i + 1)) - a_star), cell) << "row " << j;
      }
    }
    if (std::abs(a_star) < range - cell) EXPECT_GE(crossings, 1) << "row " << j;
  }
  EXPECT_GT(crossings, 0);
}

TEST(SliceExport, CsvAndPixmapRoundTrip) {
  const Model a = small_convnet(12), b = small_convnet(13);
  const Tensor x = random_tensor({3, 8, 8}, 14, 20.0f, 230.0f);
  const auto dirs = slice_directions(a, x, 3, 1);
  const std::vector<const Classifier*> both = {&a, &b};
  const auto dir = std::filesystem::temp_directory_path() / "kdadv_test_slice";
  std::filesystem::remove_all(dir);

  const auto one = boundary_grid(std::span(both).first(1), x, 3, dirs, 50.0, 21);
  const auto files_one = export_slice(one, dir, "one");
  ASSERT_EQ(files_one.size(), 2u);
  std::ifstream in(files_one[0]);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 21u * 21u + 1);

  const auto s = boundary_grid(both, x, 3, dirs, 50.0, 21);
  const auto files = export_slice(s, dir, "two");
  ASSERT_EQ(files.size(), 3u);
  const auto back = import_slice_csv(files[0]);
  EXPECT_EQ(back.resolution, 21);
  EXPECT_DOUBLE_EQ(back.range, 50.0);
  ASSERT_EQ(back.grids.size(), 2u);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(back.grids[m].model, s.grids[m].model);
    EXPECT_EQ(back.grids[m].classes, s.grids[m].classes);
    EXPECT_EQ(back.grids[m].correct, s.grids[m].correct);
    const Pixmap img = read_ppm(files[m + 1]);
    EXPECT_EQ(img.width, 21);
    EXPECT_EQ(img.height, 21);
    EXPECT_EQ(img.rgb, render_slice(s, m).rgb);
  }
  EXPECT_THROW(import_slice_csv(dir / "absent.csv"), MissingArtifact);
}

}  // namespace
}  // namespace kdadv
