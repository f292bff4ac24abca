// Acceptance gate. `acceptance --criterion N` checks one criterion and prints
// a single PASS/FAIL line; `--criterion 0` prepares the shared trained run.
// Criteria that need trained models share a cached pipeline run under --work.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <sys/wait.h>

#include "gradcheck.hpp"
#include "kdadv/attacks.hpp"
#include "kdadv/boundary.hpp"
#include "kdadv/distill.hpp"
#include "kdadv/metrics.hpp"
#include "kdadv/pipeline.hpp"
#include "kdadv/zoo.hpp"

using namespace kdadv;
namespace fs = std::filesystem;
using testing::check_input_gradients;
using testing::check_param_gradients;
using testing::random_tensor;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "  fail: " << what << '\n';
    }
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

fs::path g_work;
std::string g_cli;

// Synthetic data and tiny models, or the full experiment when a CIFAR-10
// binary directory is named by KDADV_CIFAR10_DIR.
std::optional<std::string> cifar_dir() {
  const char* dir = std::getenv("KDADV_CIFAR10_DIR");
  if (!dir || !*dir) return std::nullopt;
  return std::string(dir);
}

RunConfig run_config() {
  RunConfig c = fast_config();
  c.out_dir = g_work / "run";
  if (const auto dir = cifar_dir()) {
    c = default_config();
    c.data.cifar_dir = *dir;
    c.out_dir = g_work / "run-cifar";
  }
  return c;
}

// Trains the shared run and writes its matrix; reruns reuse every artifact.
EvalReport shared_matrix(bool refresh = false) {
  const RunConfig c = run_config();
  const fs::path csv = c.out_dir / "reports" / "matrix.csv";
  if (!refresh && fs::exists(csv)) {
    EvalReport r = read_report(csv, ReportFormat::kCsv);
    if (r.config_hash == config_hash(c)) return r;
  }
  std::ofstream log(g_work / "run.log", std::ios::app);
  Pipeline p(c, log);
  p.prepare();
  p.train_all();
  return p.evaluate();
}

const EvalRow& row(const EvalReport& r, const std::string& attacker, AttackKind kind) {
  for (const auto& x : r.rows) {
    if (x.attacker == attacker && x.attack == kind) return x;
  }
  throw std::runtime_error("no matrix row for " + attacker + "/" + std::string(attack_name(kind)));
}

std::vector<std::string> attackers_of(const EvalReport& r) {
  std::vector<std::string> ids;
  for (const auto& x : r.rows) {
    if (ids.empty() || ids.back() != x.attacker) ids.push_back(x.attacker);
  }
  return ids;
}

void print_matrix(const EvalReport& r, Verdict& v) { v.detail << format_report_table(r); }

// 1. Reverse-mode gradients against central differences.
Model layer_model(LayerKind kind, std::uint64_t seed) {
  ModelBuilder b(std::string(layer_kind_name(kind)), {3, 6, 6}, 3);
  int h = b.conv2d(b.input(), 4, 3, 1, 1);
  switch (kind) {
    case LayerKind::kConv2d: h = b.conv2d(h, 3, 3, 2, 1); break;
    case LayerKind::kDense: h = b.dense(h, 5); break;
    case LayerKind::kRelu: h = b.relu(h); break;
    case LayerKind::kMaxPool2d: h = b.max_pool2d(h, 2, 2); break;
    case LayerKind::kGlobalAvgPool: h = b.global_avg_pool(h); break;
    case LayerKind::kAddSkip: h = b.add(h, b.conv2d(h, 4, 3, 1, 1)); break;
    case LayerKind::kConcat: h = b.concat({h, b.conv2d(b.input(), 2, 1), b.conv2d(h, 3, 5, 1, 2)}); break;
    case LayerKind::kFlatten: h = b.flatten(h); break;
    case LayerKind::kInput: break;
  }
  b.dense(h, 3);
  Model m = b.build(seed);
  m.set_normalization({{120.0f, 125.0f, 130.0f}, {60.0f, 62.0f, 64.0f}});
  return m;
}

Verdict gradients() {
  Verdict v;
  constexpr int kCoords = 100;
  constexpr double kTol = 1e-2;
  const auto start = std::chrono::steady_clock::now();
  auto report = [&](const std::string& what, const testing::GradCheckResult& r) {
    v.detail << "  " << what << ": " << r.checked << " coordinates, worst relative error " << fmt(r.worst, 6) << '\n';
    v.expect(r.checked >= kCoords, what + " checked only " + std::to_string(r.checked) + " coordinates");
    v.expect(r.worst <= kTol, what + " at " + r.worst_at);
  };
  for (LayerKind k : {LayerKind::kConv2d, LayerKind::kDense, LayerKind::kRelu, LayerKind::kMaxPool2d,
                      LayerKind::kGlobalAvgPool, LayerKind::kAddSkip, LayerKind::kConcat, LayerKind::kFlatten}) {
    const Model m = layer_model(k, 31);
    const Tensor x = random_tensor({2, 3, 6, 6}, 5, 0.0f, 255.0f);
    const Tensor w = random_tensor({2, 3}, 6);
    const std::string name(layer_kind_name(k));
    report(name + " parameters", check_param_gradients(m, x, w, kCoords, 99));
    report(name + " input", check_input_gradients(m, x, w, kCoords, 100, 1e-2f));
  }
  for (Role r : {Role::kTeacherResidual, Role::kTeacherDense, Role::kStudentPlain, Role::kBlackboxMultibranch}) {
    Model m = build(r, 7, ZooScale::kFull);
    m.set_normalization({{125.0f, 123.0f, 114.0f}, {63.0f, 62.0f, 66.0f}});
    const Tensor x = random_tensor({1, 3, 32, 32}, 8, 0.0f, 255.0f);
    const Tensor w = random_tensor({1, 10}, 9);
    // The reference forward must agree with the engine before it can serve as the oracle.
    const auto ref = testing::reference_logits(m, std::vector<double>(x.data().begin(), x.data().end()));
    const Tensor z = m.forward(x);
    double gap = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      gap = std::max(gap, std::abs(ref[i] - z[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    v.expect(gap <= 1e-4 * std::max(1.0, scale), std::string(role_name(r)) + " reference forward differs by " + fmt(gap, 8));
    report(std::string(role_name(r)) + " input",
           testing::check_input_gradients_reference(m, x, w, kCoords, 10, 1e-2f));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.detail << "  runtime " << fmt(secs, 1) << " s\n";
  v.expect(secs < 120.0, "runtime " + fmt(secs, 1) + " s exceeds 2 min");
  return v;
}

// 2. Loss identities.
Verdict losses() {
  Verdict v;
  const Tensor z = random_tensor({64, 10}, 1, -10.0f, 10.0f);
  for (double tau : {1.0, 5.0}) {
    const double l = soft_loss(z, z, tau).value;
    v.expect(l == 0.0, "soft_loss(z, z, " + fmt(tau, 0) + ") = " + fmt(l, 12));
  }
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> tau_dist(0.5, 20.0);
  double lowest = 1e300;
  for (int i = 0; i < 1000; ++i) {
    const Tensor t = random_tensor({1, 10}, 1000 + 2 * i, -15.0f, 15.0f);
    const Tensor s = random_tensor({1, 10}, 1001 + 2 * i, -15.0f, 15.0f);
    lowest = std::min(lowest, soft_loss(t, s, tau_dist(rng)).value);
  }
  v.detail << "  smallest soft_loss over 1000 random pairs " << lowest << '\n';
  v.expect(lowest >= 0.0, "negative soft_loss");

  const Tensor t = random_tensor({8, 10}, 3, -5.0f, 5.0f);
  const Tensor s = random_tensor({8, 10}, 4, -5.0f, 5.0f);
  const std::vector<int> y = {0, 1, 2, 3, 4, 5, 6, 7};
  const LossValue hard = hard_loss(s, y);
  const LossValue soft = soft_loss(t, s, 5.0);
  for (double a : {0.0, 0.1, 0.3, 0.5, 0.9, 1.0}) {
    const double k = kd_loss(a, hard, soft).value;
    v.expect(k == a * hard.value + (1.0 - a) * soft.value, "kd_loss not affine at alpha " + fmt(a, 2));
  }
  const Tensor uniform({5, 10}, 0.37f);
  const double ce = hard_loss(uniform, std::vector<int>{0, 3, 5, 7, 9}).value;
  v.detail << "  hard_loss on uniform logits " << fmt(ce, 8) << " (ln 10 = " << fmt(std::log(10.0), 8) << ")\n";
  v.expect(std::abs(ce - std::log(10.0)) <= 1e-4, "hard_loss on uniform logits");
  return v;
}

// 3. Attack invariants on a random convnet.
Verdict attack_invariants() {
  Verdict v;
  ModelBuilder b("probe-net", {3, 8, 8}, 4);
  int h = b.relu(b.conv2d(b.input(), 6, 3, 1, 1));
  h = b.max_pool2d(h, 2, 2);
  b.dense(b.global_avg_pool(b.relu(b.conv2d(h, 8, 3, 1, 1))), 4);
  Model m = b.build(3);
  m.set_normalization({{128.0f, 128.0f, 128.0f}, {64.0f, 64.0f, 64.0f}});
  const Tensor x = random_tensor({6, 3, 8, 8}, 4, 0.0f, 255.0f);
  const std::vector<int> y = {0, 1, 2, 3, 0, 1};
  const auto per_image = static_cast<std::size_t>(x.sample_size());

  for (double eps : {0.5, 4.0, 25.0, 80.0}) {
    const Tensor a = fgs(m, x, y, eps);
    const Tensor p = pgd(m, x, y, eps, eps / 4.0, 10);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max({worst, std::abs(static_cast<double>(a[i]) - x[i]), std::abs(static_cast<double>(p[i]) - x[i])});
    }
    v.expect(worst <= eps + 1e-5, "linf " + fmt(worst, 6) + " exceeds epsilon " + fmt(eps, 2));

    const Tensor d = l2_perturbation(loss_input_gradient(m, x, y), eps);
    for (std::size_t n = 0; n < y.size(); ++n) {
      double sq = 0.0;
      for (std::size_t i = 0; i < per_image; ++i) sq += static_cast<double>(d[n * per_image + i]) * d[n * per_image + i];
      v.expect(std::abs(std::sqrt(sq) - eps) <= 1e-4 * std::max(1.0, eps), "fg pre-clip l2 norm " + fmt(std::sqrt(sq), 6));
    }

    const Tensor one = pgd(m, x, y, eps, eps, 1);
    v.expect(std::memcmp(one.raw(), a.raw(), a.size() * sizeof(float)) == 0,
             "pgd(1, step = epsilon) differs from fgs at epsilon " + fmt(eps, 2));
  }
  for (AttackKind k : {AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd}) {
    AttackSpec spec;
    spec.kind = k;
    spec.epsilon = 0.0;
    const Tensor z = run_attack(m, x, y, spec);
    v.expect(std::memcmp(z.raw(), x.raw(), x.size() * sizeof(float)) == 0,
             "epsilon 0 is not the identity for " + std::string(attack_name(k)));
  }
  return v;
}

// 4. Curriculum teacher schedule.
Verdict curriculum() {
  Verdict v;
  const std::vector<int> expected = {0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0};
  std::vector<int> trace;
  for (int e = 0; e < 12; ++e) trace.push_back(curriculum_teacher(e, 4, 2));
  v.detail << "  trace";
  for (int t : trace) v.detail << ' ' << t;
  v.detail << '\n';
  v.expect(trace == expected, "teacher trace");
  return v;
}

// 5. Calibrated RMSD on every matrix row.
Verdict calibration() {
  Verdict v;
  const EvalReport r = shared_matrix();
  for (const auto& x : r.rows) {
    v.expect(x.rmsd >= 24.0 && x.rmsd <= 26.0,
             x.attacker + "/" + std::string(attack_name(x.attack)) + " rmsd " + fmt(x.rmsd));
  }
  print_matrix(r, v);
  return v;
}

// 6. Black-box self-attack.
Verdict self_attack() {
  Verdict v;
  const EvalReport r = shared_matrix();
  const double a = row(r, kBlackboxId, AttackKind::kPgd).asr;
  v.detail << "  self pgd asr " << fmt(a) << '\n';
  v.expect(a >= 0.95, "self pgd asr " + fmt(a) + " < 0.95");
  return v;
}

// 7. PGD >= FGS >= FG - 0.02 on every attacker row.
Verdict ordering() {
  Verdict v;
  const EvalReport r = shared_matrix();
  for (const auto& id : attackers_of(r)) {
    const double fg = row(r, id, AttackKind::kFg).asr;
    const double fgs_asr = row(r, id, AttackKind::kFgs).asr;
    const double pgd_asr = row(r, id, AttackKind::kPgd).asr;
    v.detail << "  " << id << ": fg " << fmt(fg) << " fgs " << fmt(fgs_asr) << " pgd " << fmt(pgd_asr) << '\n';
    v.expect(pgd_asr >= fgs_asr, id + ": pgd " + fmt(pgd_asr) + " < fgs " + fmt(fgs_asr));
    v.expect(fgs_asr >= fg - 0.02, id + ": fgs " + fmt(fgs_asr) + " < fg - 0.02 = " + fmt(fg - 0.02));
  }
  return v;
}

// 8. Student PGD against ensemble PGD generation time.
Verdict speedup() {
  Verdict v;
  const EvalReport r = shared_matrix();
  const double ens = row(r, kEnsembleId, AttackKind::kPgd).pgd_time_s;
  for (const auto& x : r.rows) {
    if (x.type != AttackerType::kStudent || x.attack != AttackKind::kPgd) continue;
    const double ratio = ens / x.pgd_time_s;
    v.detail << "  " << x.attacker << ": " << fmt(x.pgd_time_s, 3) << " s vs ensemble " << fmt(ens, 3)
             << " s, ratio " << fmt(ratio, 2) << '\n';
    v.expect(ratio >= 2.0, x.attacker + " speedup " + fmt(ratio, 2) + " < 2");
  }
  for (const auto& d : r.details) v.expect(d.parallelism == 1, "pgd timing was not serial");
  return v;
}

// 9. Ablation trends. Rows count only for students trained on CIFAR-10 with
// at least 70% clean test accuracy.
Verdict ablation() {
  Verdict v;
  RunConfig c = run_config();
  c.out_dir = g_work / (cifar_dir() ? "ablation-cifar" : "ablation");
  c.kd.seeds = {0, 1};
  const bool cifar = cifar_dir().has_value();
  std::ofstream log(g_work / "ablation.log", std::ios::app);
  Pipeline p(c, log);
  p.prepare();
  p.train_grid();
  p.train(Role::kBlackboxMultibranch);
  const AblationReport a = p.ablate();
  v.detail << format_ablation_table(a);

  std::vector<AblationRow> counted;
  for (const auto& x : a.rows) {
    if (cifar && x.test_acc >= 0.70) counted.push_back(x);
  }
  if (!cifar) v.detail << "  data source is synthetic: no row qualifies (set KDADV_CIFAR10_DIR to a CIFAR-10 binary directory)\n";
  v.expect(!counted.empty(), "no ablation row reached 70% clean accuracy on CIFAR-10");

  // Trends are reported for the full grid and judged on the counted rows.
  // Trends use the mean PGD ASR over seeds of each (strategy, alpha, tau).
  auto judge = [&](const std::vector<AblationRow>& rows, bool enforce) {
    std::map<std::tuple<Strategy, double, double>, std::pair<double, int>> sums;
    for (const auto& x : rows) {
      auto& cell = sums[{x.strategy, x.alpha, x.tau}];
      cell.first += x.pgd_asr;
      cell.second += 1;
    }
    auto mean = [&](Strategy s, double a, double t) -> std::optional<double> {
      const auto it = sums.find({s, a, t});
      if (it == sums.end()) return std::nullopt;
      return it->second.first / it->second.second;
    };
    std::set<std::pair<Strategy, double>> pairs;
    for (const auto& [key, _] : sums) pairs.insert({std::get<0>(key), std::get<1>(key)});
    for (const auto& [s, a] : pairs) {
      const auto t1 = mean(s, a, 1.0), t5 = mean(s, a, 5.0);
      if (!t1 || !t5) continue;
      const std::string name = std::string(strategy_name(s)) + " alpha " + fmt(a, 1);
      v.detail << "  " << name << ": mean pgd asr tau 1 " << fmt(*t1) << " vs tau 5 " << fmt(*t5) << '\n';
      if (enforce) v.expect(*t1 > *t5, name + ": tau 1 does not beat tau 5");
    }
    double best = -1.0;
    for (const auto& [key, cell] : sums) {
      if (std::get<0>(key) == Strategy::kCurriculum) best = std::max(best, cell.first / cell.second);
    }
    const auto target = mean(Strategy::kCurriculum, 0.3, 1.0);
    v.detail << "  curriculum best mean pgd asr " << fmt(best) << ", alpha 0.3 tau 1 " << fmt(target.value_or(-1.0)) << '\n';
    if (enforce) v.expect(target && *target >= best - 0.02, "curriculum alpha 0.3 tau 1 is not within 0.02 of the best");
  };
  judge(counted.empty() ? a.rows : counted, !counted.empty());
  return v;
}

// 10. Transfer beats single-teacher FG and the clean error rate.
Verdict transfer_gap() {
  Verdict v;
  const EvalReport r = shared_matrix();
  const double teacher_fg = std::max(row(r, model_id(Role::kTeacherResidual), AttackKind::kFg).asr,
                                     row(r, model_id(Role::kTeacherDense), AttackKind::kFg).asr);
  for (const auto& x : r.rows) {
    if (x.attack == AttackKind::kPgd && (x.type == AttackerType::kStudent || x.type == AttackerType::kEnsemble)) {
      v.detail << "  " << x.attacker << " pgd " << fmt(x.asr) << " vs best teacher fg " << fmt(teacher_fg) << '\n';
      v.expect(x.asr > teacher_fg, x.attacker + " pgd does not exceed the teachers' fg");
    }
    if (x.type != AttackerType::kSelf) {
      v.expect(x.asr > 1.0 - x.clean_acc, x.attacker + "/" + std::string(attack_name(x.attack)) + " asr " + fmt(x.asr) +
                                              " <= clean error " + fmt(1.0 - x.clean_acc));
    }
  }
  return v;
}

// 11. Boundary slices of the trained models and of a linear oracle.
Verdict boundary() {
  Verdict v;
  shared_matrix();
  const RunConfig c = run_config();
  std::ofstream log(g_work / "run.log", std::ios::app);
  Pipeline p(c, log);
  const auto files = p.slice();
  const PreparedData& d = p.data();
  const auto idx = static_cast<std::size_t>(c.slice_image);
  const Tensor x = d.test.images(idx, idx + 1);
  const int label = d.test.labels()[idx];

  const auto ids = p.attacker_ids();
  std::vector<Model> models;
  models.reserve(ids.size());
  std::deque<Renamed> named;
  std::map<std::string, const Classifier*> by_id;
  for (const auto& id : ids) {
    if (id == kEnsembleId) continue;
    models.push_back(p.load(id));
    by_id[id] = &named.emplace_back(models.back(), id);
  }
  const Ensemble ensemble(kEnsembleId, {by_id.at(model_id(Role::kTeacherResidual)), by_id.at(model_id(Role::kTeacherDense))},
                          c.ensemble_mode);
  by_id[kEnsembleId] = &ensemble;

  const auto dirs = slice_directions(*by_id.at(kBlackboxId), x, label, c.slice_seed);
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < dirs.u.size(); ++i) {
    dot += static_cast<double>(dirs.u[i]) * dirs.v[i];
    nu += static_cast<double>(dirs.u[i]) * dirs.u[i];
    nv += static_cast<double>(dirs.v[i]) * dirs.v[i];
  }
  v.detail << "  |u.v| " << std::abs(dot) << ", |u| - 1 " << std::sqrt(nu) - 1.0 << ", |v| - 1 " << std::sqrt(nv) - 1.0 << '\n';
  v.expect(std::abs(dot) <= 1e-6 && std::abs(std::sqrt(nu) - 1.0) <= 1e-6 && std::abs(std::sqrt(nv) - 1.0) <= 1e-6,
           "slice directions are not orthonormal");

  // Anchor cell of every exported slice against clean predictions.
  int anchors = 0;
  for (const auto& f : files) {
    if (f.extension() != ".csv") continue;
    const BoundarySlice s = import_slice_csv(f);
    const int mid = (s.resolution - 1) / 2;
    v.expect(s.resolution % 2 == 1 && s.coord(mid) == 0.0, f.filename().string() + " has no anchor cell");
    v.expect(s.grids.size() == by_id.size(), f.filename().string() + " does not cover every model");
    for (const auto& g : s.grids) {
      const auto it = by_id.find(g.model);
      if (it == by_id.end()) {
        v.expect(false, "unknown model " + g.model + " in " + f.filename().string());
        continue;
      }
      const int clean = predict_all(*it->second, x)[0];
      v.expect(g.classes[static_cast<std::size_t>(mid * s.resolution + mid)] == clean,
               g.model + " anchor differs from its clean prediction in " + f.filename().string());
      ++anchors;
    }
  }
  v.detail << "  " << anchors << " anchor cells checked\n";
  v.expect(anchors > 0, "no exported slices");

  // Round trip of a freshly computed slice.
  std::vector<const Classifier*> ptrs;
  for (const auto& [id, m] : by_id) ptrs.push_back(m);
  const BoundarySlice s = boundary_grid(ptrs, x, label, dirs, 50.0, 21);
  const fs::path rt = g_work / "roundtrip";
  fs::remove_all(rt);
  const auto written = export_slice(s, rt, "rt");
  const BoundarySlice back = import_slice_csv(written[0]);
  v.expect(back.resolution == s.resolution && back.range == s.range && back.grids.size() == s.grids.size(),
           "csv round trip header");
  for (std::size_t m = 0; m < s.grids.size() && m < back.grids.size(); ++m) {
    v.expect(back.grids[m].model == s.grids[m].model && back.grids[m].classes == s.grids[m].classes &&
                 back.grids[m].correct == s.grids[m].correct,
             "csv round trip of " + s.grids[m].model);
    v.expect(read_ppm(written[m + 1]).rgb == render_slice(s, m).rgb, "pixmap round trip of " + s.grids[m].model);
  }

  // Linear two-class model: the boundary is the line alpha + beta_a a + beta_b b = 0.
  ModelBuilder lb("linear", {3, 4, 4}, 2);
  lb.dense(lb.flatten(lb.input()), 2);
  Model lin = lb.build(11);
  const Normalization norm{{120.0f, 128.0f, 136.0f}, {30.0f, 40.0f, 50.0f}};
  lin.set_normalization(norm);
  const Tensor lx({3, 4, 4}, 128.0f);
  const auto ld = slice_directions(lin, lx, 1, 4);
  const Tensor& w = lin.parameters()[0].value;
  const Tensor& bias = lin.parameters()[1].value;
  double alpha = static_cast<double>(bias[1]) - bias[0], beta_a = 0.0, beta_b = 0.0;
  for (std::size_t k = 0; k < 48; ++k) {
    const std::size_t ch = k / 16;
    const double wd = (static_cast<double>(w[48 + k]) - w[k]) / norm.stddev[ch];
    alpha += wd * (lx[k] - norm.mean[ch]);
    beta_a += wd * ld.u[k];
    beta_b += wd * ld.v[k];
  }
  const double range = 20.0;
  const int g = 81;
  const std::vector<const Classifier*> one = {&lin};
  const auto ls = boundary_grid(one, lx, 1, ld, range, g);
  const double cell = 2.0 * range / (g - 1);
  int crossings = 0;
  double worst = 0.0;
  for (int j = 0; j < g; ++j) {
    const double a_star = -(alpha + beta_b * ls.coord(j)) / beta_a;
    for (int i = 0; i + 1 < g; ++i) {
      if (ls.grids[0].correct[static_cast<std::size_t>(i * g + j)] !=
          ls.grids[0].correct[static_cast<std::size_t>((i + 1) * g + j)]) {
        ++crossings;
        worst = std::max(worst, std::abs(0.5 * (ls.coord(i) + ls.coord(i + 1)) - a_star));
      }
    }
  }
  v.detail << "  linear oracle: " << crossings << " crossings, worst offset " << fmt(worst / cell, 3) << " cells\n";
  v.expect(crossings > 0, "linear oracle slice has no boundary");
  v.expect(worst <= cell, "linear oracle boundary off by more than one cell");
  return v;
}

// 12. The --fast CLI pipeline, twice with the same seed.
std::string without_timing(const fs::path& csv) {
  std::ifstream in(csv);
  std::ostringstream out;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i != 6) out << cells[i] << ',';
    }
    out << '\n';
  }
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict end_to_end() {
  Verdict v;
  std::vector<fs::path> outs;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = g_work / ("cli" + std::to_string(run));
    fs::remove_all(out);
    fs::create_directories(out);
    const std::string base = g_cli + " --fast --seed 7 --out " + out.string();
    const std::string cmd = "(" + base + " prepare && " + base + " train && " + base + " attack && " + base +
                            " evaluate && " + base + " slice) > " + (out / "cli.log").string() + " 2>&1";
    const auto start = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    v.detail << "  run " << run << ": exit " << code << " in " << fmt(secs, 1) << " s\n";
    v.expect(code == 0, "run " + std::to_string(run) + " exited with " + std::to_string(code));
    v.expect(secs < 300.0, "run " + std::to_string(run) + " took " + fmt(secs, 1) + " s");
    outs.push_back(out);
  }
  const fs::path m0 = outs[0] / "reports" / "matrix.csv", m1 = outs[1] / "reports" / "matrix.csv";
  v.expect(fs::exists(m0) && fs::exists(m1), "matrix report missing");
  if (fs::exists(m0) && fs::exists(m1)) {
    v.expect(without_timing(m0) == without_timing(m1), "matrix metrics differ between runs");
  }
  int compared = 0;
  for (const auto& e : fs::directory_iterator(outs[0] / "slices")) {
    if (e.path().extension() != ".csv" && e.path().extension() != ".ppm") continue;
    const fs::path twin = outs[1] / "slices" / e.path().filename();
    v.expect(fs::exists(twin) && slurp(e.path()) == slurp(twin), e.path().filename().string() + " differs");
    ++compared;
  }
  for (const auto& e : fs::directory_iterator(outs[0] / "models")) {
    if (e.path().extension() != ".ckpt") continue;
    v.expect(slurp(e.path()) == slurp(outs[1] / "models" / e.path().filename()),
             e.path().filename().string() + " differs");
    ++compared;
  }
  v.detail << "  " << compared << " slice and checkpoint files compared byte for byte\n";
  return v;
}

const std::map<int, std::pair<std::string, std::function<Verdict()>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Verdict()>>> all = {
      {1, {"gradient correctness", gradients}},
      {2, {"loss identities", losses}},
      {3, {"attack invariants", attack_invariants}},
      {4, {"curriculum schedule", curriculum}},
      {5, {"rmsd calibration", calibration}},
      {6, {"self-attack strength", self_attack}},
      {7, {"attack-strength ordering", ordering}},
      {8, {"student speedup", speedup}},
      {9, {"ablation trends", ablation}},
      {10, {"transfer gap", transfer_gap}},
      {11, {"boundary slice", boundary}},
      {12, {"fast end-to-end", end_to_end}},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> which;
  std::string work = "acceptance_runs";
  app.add_option("--criterion", which, "Criterion numbers (0 trains the shared run; default: all)");
  app.add_option("--work", work, "Working directory for trained runs");
  app.add_option("--cli", g_cli, "Path to the kdadv executable")->required();
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  fs::create_directories(g_work);

  if (which.empty()) {
    for (const auto& [n, _] : criteria()) which.push_back(n);
  }
  bool all_pass = true;
  for (int n : which) {
    if (n == 0) {
      try {
        shared_matrix(true);
        std::cout << "SETUP shared run ready\n";
      } catch (const std::exception& e) {
        std::cout << "SETUP failed: " << e.what() << '\n';
        all_pass = false;
      }
      continue;
    }
    const auto it = criteria().find(n);
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << n << '\n';
      return 2;
    }
    Verdict v;
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v.expect(false, std::string("error: ") + e.what());
    }
    std::cout << v.detail.str();
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << it->second.first << std::endl;
    all_pass = all_pass && v.pass;
  }
  return all_pass ? 0 : 1;
}
