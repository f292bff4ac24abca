#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "kdadv/error.hpp"
#include "kdadv/evaluation.hpp"
#include "kdadv/model.hpp"

namespace kdadv {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kdadv_test_eval";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

Model small_convnet(const std::string& name, std::uint64_t seed) {
  ModelBuilder b(name, {3, 8, 8}, 4);
  int h = b.relu(b.conv2d(b.input(), 6, 3, 1, 1));
  h = b.max_pool2d(h, 2, 2);
  b.dense(b.flatten(h), 4);
  Model m = b.build(seed);
  m.set_normalization({{128.0f, 128.0f, 128.0f}, {40.0f, 40.0f, 40.0f}});
  return m;
}

Dataset test_set(int per_class = 10) {
  BlobOptions o;
  o.num_classes = 4;
  o.n_per_class = per_class;
  o.image_size = 8;
  o.noise_std = 25.0;
  return synthetic_blobs(o, Split::kTest);
}

EvalReport sample_report() {
  EvalReport r;
  r.asr_mode = AsrMode::kCleanCorrect;
  r.config_hash = "00ff";
  r.target = "bb";
  r.rows.push_back({"bb", AttackerType::kSelf, AttackKind::kPgd, 25.123456, 1.0, 0.876543, 3.14159, std::nullopt});
  r.rows.push_back({"student-c", AttackerType::kStudent, AttackKind::kFg, 24.5, 0.333333, 0.876543, 0.5,
                    KDParams{Strategy::kCurriculum, 0.3, 5.0, 1}});
  r.details = {{12.5, 25.1, 9, 3.14159, 1}, {900.0, 24.6, 11, 0.1, 1}};
  return r;
}

void expect_rows_near(const EvalReport& a, const EvalReport& b) {
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    EXPECT_EQ(x.attacker, y.attacker);
    EXPECT_EQ(x.type, y.type);
    EXPECT_EQ(x.attack, y.attack);
    EXPECT_NEAR(x.rmsd, y.rmsd, 5e-5);
    EXPECT_NEAR(x.asr, y.asr, 5e-5);
    EXPECT_NEAR(x.clean_acc, y.clean_acc, 5e-5);
    EXPECT_NEAR(x.pgd_time_s, y.pgd_time_s, 5e-5);
    ASSERT_EQ(x.kd.has_value(), y.kd.has_value());
    if (x.kd) {
      EXPECT_EQ(x.kd->strategy, y.kd->strategy);
      EXPECT_NEAR(x.kd->alpha, y.kd->alpha, 5e-5);
      EXPECT_NEAR(x.kd->tau, y.kd->tau, 5e-5);
      EXPECT_EQ(x.kd->seed, y.kd->seed);
    }
  }
}

TEST(Reports, CsvAndJsonRoundTrip) {
  const EvalReport r = sample_report();
  for (auto fmt : {ReportFormat::kCsv, ReportFormat::kJson}) {
    const auto p = scratch(fmt == ReportFormat::kCsv ? "r.csv" : "r.json");
    write_report(r, p, fmt);
    const EvalReport back = read_report(p, fmt);
    expect_rows_near(r, back);
    EXPECT_EQ(back.asr_mode, AsrMode::kCleanCorrect);
    EXPECT_EQ(back.config_hash, "00ff");
    ASSERT_EQ(back.details.size(), 2u);
    EXPECT_EQ(back.details[1].epsilon, 900.0);
  }
  EXPECT_EQ(line_count(scratch("r.csv")), r.rows.size() + 1);
  std::ifstream in(scratch("r.csv"));
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, kReportColumns);
  EXPECT_EQ(first, "bb,self,pgd,25.1235,1.0000,0.8765,3.1416,,,,");
}

TEST(Reports, EmptyReportIsHeaderOnly) {
  const auto p = scratch("empty.csv");
  write_report(EvalReport{}, p, ReportFormat::kCsv);
  EXPECT_EQ(line_count(p), 1u);
  EXPECT_TRUE(read_report(p, ReportFormat::kCsv).rows.empty());
  write_report(EvalReport{}, scratch("empty.json"), ReportFormat::kJson);
  EXPECT_TRUE(read_report(scratch("empty.json"), ReportFormat::kJson).rows.empty());
}

TEST(Reports, MalformedFilesAreRejected) {
  const auto p = scratch("bad.csv");
  std::ofstream(p) << "attacker,type\nx,self\n";
  EXPECT_THROW(read_report(p, ReportFormat::kCsv), FormatError);
  EXPECT_THROW(read_report(scratch("nope.csv"), ReportFormat::kCsv), MissingArtifact);
}

TEST(Reports, AblationRoundTrip) {
  AblationReport r;
  r.rows.push_back({Strategy::kJoint, 0.3, 1.0, 0, 25.01, 0.2, 0.4, 0.6, 0.9, 1.5});
  r.rows.push_back({Strategy::kCurriculum, 0.0, 5.0, 1, 24.99, 0.1, 0.3, 0.5, 0.8, 1.25});
  for (auto fmt : {ReportFormat::kCsv, ReportFormat::kJson}) {
    const auto p = scratch(fmt == ReportFormat::kCsv ? "ab.csv" : "ab.json");
    write_ablation(r, p, fmt);
    const auto back = read_ablation(p, fmt);
    ASSERT_EQ(back.rows.size(), 2u);
    EXPECT_EQ(back.rows[0].strategy, Strategy::kJoint);
    EXPECT_EQ(back.rows[1].seed, 1u);
    EXPECT_NEAR(back.rows[1].pgd_asr, 0.5, 5e-5);
    EXPECT_NEAR(back.rows[0].pgd_time_s, 1.5, 5e-5);
  }
  EXPECT_EQ(line_count(scratch("ab.csv")), 3u);
}

class Matrix : public ::testing::Test {
 protected:
  Model target = small_convnet("target", 1);
  Model a = small_convnet("att-a", 2);
  Model b = small_convnet("att-b", 3);
  Dataset test = test_set();
  MatrixOptions options() const {
    MatrixOptions o;
    o.calibration.tolerance = 0.25;
    o.generation.batch_size = 16;
    o.pgd_iterations = 5;
    return o;
  }
};

TEST_F(Matrix, OneRowPerAttackerAndAttack) {
  const std::vector<Attacker> attackers = {{&target, AttackerType::kSelf, std::nullopt},
                                           {&a, AttackerType::kBaseline, std::nullopt},
                                           {&b, AttackerType::kStudent, KDParams{Strategy::kJoint, 0.3, 1.0, 0}}};
  const EvalReport r = run_matrix(attackers, target, test, options());
  ASSERT_EQ(r.rows.size(), 9u);
  ASSERT_EQ(r.details.size(), 9u);
  const double clean = accuracy(target, test);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    EXPECT_EQ(row.attacker, attackers[i / 3].model->name());
    EXPECT_EQ(row.attack, (std::array<AttackKind, 3>{AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd})[i % 3]);
    EXPECT_NEAR(row.rmsd, 25.0, 1.0) << row.attacker << " " << attack_name(row.attack);
    EXPECT_GE(row.asr, 0.0);
    EXPECT_LE(row.asr, 1.0);
    EXPECT_EQ(row.clean_acc, clean);
    EXPECT_EQ(row.pgd_time_s, r.details[i / 3 * 3 + 2].seconds);
  }
  EXPECT_TRUE(r.rows[8].kd.has_value());

  // Metric values are reproducible; only timings may differ.
  const EvalReport again = run_matrix(attackers, target, test, options());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(r.rows[i].rmsd, again.rows[i].rmsd);
    EXPECT_EQ(r.rows[i].asr, again.rows[i].asr);
    EXPECT_EQ(r.details[i].epsilon, again.details[i].epsilon);
  }
}

TEST_F(Matrix, KnownEpsilonSkipsCalibration) {
  MatrixOptions o = options();
  o.attacks = {AttackKind::kFgs};
  o.known_epsilon = [](const std::string&, AttackKind) { return std::optional<double>(4.0); };
  const std::vector<Attacker> attackers = {{&a, AttackerType::kBaseline, std::nullopt}};
  const auto r = run_matrix(attackers, target, test, o);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.details[0].epsilon, 4.0);
  EXPECT_EQ(r.details[0].calibration_evaluations, 0);
  EXPECT_LE(r.rows[0].rmsd, 4.0 + 1e-6);
}

TEST_F(Matrix, FailureLeavesPartialReport) {
  Model flat = small_convnet("flat", 4);
  for (auto& p : flat.parameters()) p.value.fill(0.0f);
  MatrixOptions o = options();
  o.partial_report = scratch("partial.csv");
  fs::remove(*o.partial_report);
  const std::vector<Attacker> attackers = {{&a, AttackerType::kBaseline, std::nullopt},
                                           {&flat, AttackerType::kBaseline, std::nullopt}};
  EXPECT_THROW(run_matrix(attackers, target, test, o), CalibrationError);
  const auto partial = read_report(*o.partial_report, ReportFormat::kCsv);
  ASSERT_EQ(partial.rows.size(), 3u);
  EXPECT_EQ(partial.rows[2].attacker, "att-a");
}

TEST_F(Matrix, AblationCollapsesStudents) {
  const std::vector<Attacker> students = {{&a, AttackerType::kStudent, KDParams{Strategy::kCurriculum, 0.0, 1.0, 0}},
                                          {&b, AttackerType::kStudent, KDParams{Strategy::kJoint, 0.3, 5.0, 1}}};
  const auto r = run_ablation(students, target, test, options());
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[1].strategy, Strategy::kJoint);
  EXPECT_EQ(r.rows[1].tau, 5.0);
  EXPECT_EQ(r.rows[0].test_acc, accuracy(a, test));
  EXPECT_NEAR(r.rows[0].rmsd, 25.0, 1.0);
  const std::vector<Attacker> no_kd = {{&a, AttackerType::kBaseline, std::nullopt}};
  EXPECT_THROW(run_ablation(no_kd, target, test, options()), ContractError);
}

// PGD cost is dominated by the per-iteration gradient, so doubling the
// iteration count should roughly double the generation time.
TEST_F(Matrix, PgdTimeScalesWithIterations) {
  const Dataset big = test_set(120);
  const auto timed = [&](int iterations) {
    AttackSpec spec{.kind = AttackKind::kPgd, .epsilon = 8.0, .iterations = iterations};
    double best = 1e30;
    for (int rep = 0; rep < 5; ++rep) best = std::min(best, generate(a, big, spec, {.batch_size = 60}).seconds);
    return best;
  };
  const double t5 = timed(5), t10 = timed(10);
  EXPECT_NEAR(t10 / t5, 2.0, 0.6) << "t5=" << t5 << " t10=" << t10;
}

}  // namespace
}  // namespace kdadv
