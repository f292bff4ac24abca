#include "kdadv/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "kdadv/error.hpp"

namespace kdadv {

std::string_view attacker_type_name(AttackerType type) {
  switch (type) {
    case AttackerType::kSelf: return "self";
    case AttackerType::kBaseline: return "baseline";
    case AttackerType::kEnsemble: return "ensemble";
    case AttackerType::kStudent: return "student";
  }
  return "unknown";
}

AttackerType parse_attacker_type(std::string_view name) {
  for (auto t : {AttackerType::kSelf, AttackerType::kBaseline, AttackerType::kEnsemble, AttackerType::kStudent}) {
    if (attacker_type_name(t) == name) return t;
  }
  throw FormatError("unknown attacker type '" + std::string(name) + "'");
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double round4(double v) { return std::stod(fixed(v, 4)); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::string_view header) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": unexpected header '" + line + "'");
  const auto columns = split_csv_line(std::string(header)).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns) {
      throw FormatError(path.string() + ": row " + std::to_string(rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " cells, expected " + std::to_string(columns));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("report " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void check_name(const std::string& name) {
  if (name.find_first_of(",\n\"") != std::string::npos) {
    throw ContractError("attacker name '" + name + "' cannot be written to a report");
  }
}

nlohmann::json row_json(const EvalRow& r) {
  nlohmann::json j;
  j["attacker"] = r.attacker;
  j["type"] = attacker_type_name(r.type);
  j["attack"] = attack_name(r.attack);
  j["rmsd"] = round4(r.rmsd);
  j["asr"] = round4(r.asr);
  j["clean_acc"] = round4(r.clean_acc);
  j["pgd_time_s"] = round4(r.pgd_time_s);
  if (r.kd) {
    j["alpha"] = round4(r.kd->alpha);
    j["tau"] = round4(r.kd->tau);
    j["strategy"] = strategy_name(r.kd->strategy);
    j["seed"] = r.kd->seed;
  } else {
    j["alpha"] = j["tau"] = j["strategy"] = j["seed"] = nullptr;
  }
  return j;
}

EvalRow row_from_json(const nlohmann::json& j) {
  EvalRow r;
  r.attacker = j.at("attacker").get<std::string>();
  r.type = parse_attacker_type(j.at("type").get<std::string>());
  r.attack = parse_attack(j.at("attack").get<std::string>());
  r.rmsd = j.at("rmsd").get<double>();
  r.asr = j.at("asr").get<double>();
  r.clean_acc = j.at("clean_acc").get<double>();
  r.pgd_time_s = j.at("pgd_time_s").get<double>();
  if (!j.at("strategy").is_null()) {
    r.kd = KDParams{parse_strategy(j.at("strategy").get<std::string>()), j.at("alpha").get<double>(),
                    j.at("tau").get<double>(), j.at("seed").get<std::uint64_t>()};
  }
  return r;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".meta.json");
  return p;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace

nlohmann::json EvalReport::metadata() const {
  nlohmann::json m;
  m["asr_mode"] = asr_mode_name(asr_mode);
  m["target"] = target;
  m["config_hash"] = config_hash;
  m["rows"] = nlohmann::json::array();
  for (std::size_t i = 0; i < details.size() && i < rows.size(); ++i) {
    const auto& d = details[i];
    m["rows"].push_back({{"attacker", rows[i].attacker},
                         {"attack", attack_name(rows[i].attack)},
                         {"epsilon", d.epsilon},
                         {"calibration_rmsd", d.calibration_rmsd},
                         {"calibration_evaluations", d.calibration_evaluations},
                         {"rmsd", rows[i].rmsd},
                         {"seconds", d.seconds},
                         {"parallelism", d.parallelism}});
  }
  return m;
}

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  for (const auto& r : report.rows) check_name(r.attacker);
  auto out = open_for_write(path);
  if (format == ReportFormat::kCsv) {
    out << kReportColumns << '\n';
    for (const auto& r : report.rows) {
      out << r.attacker << ',' << attacker_type_name(r.type) << ',' << attack_name(r.attack) << ','
          << fixed(r.rmsd, 4) << ',' << fixed(r.asr, 4) << ',' << fixed(r.clean_acc, 4) << ','
          << fixed(r.pgd_time_s, 4) << ',';
      if (r.kd) {
        out << fixed(r.kd->alpha, 4) << ',' << fixed(r.kd->tau, 4) << ',' << strategy_name(r.kd->strategy) << ','
            << r.kd->seed;
      } else {
        out << ",,,";
      }
      out << '\n';
    }
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : report.rows) arr.push_back(row_json(r));
    out << arr.dump(2) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
  auto meta = open_for_write(meta_path(path));
  meta << report.metadata().dump(2) << '\n';
}

EvalReport read_report(const std::filesystem::path& path, ReportFormat format) {
  EvalReport report;
  if (format == ReportFormat::kCsv) {
    for (const auto& c : read_csv(path, kReportColumns)) {
      EvalRow r;
      r.attacker = c[0];
      r.type = parse_attacker_type(c[1]);
      r.attack = parse_attack(c[2]);
      r.rmsd = std::stod(c[3]);
      r.asr = std::stod(c[4]);
      r.clean_acc = std::stod(c[5]);
      r.pgd_time_s = std::stod(c[6]);
      if (!c[9].empty()) r.kd = KDParams{parse_strategy(c[9]), std::stod(c[7]), std::stod(c[8]), std::stoull(c[10])};
      report.rows.push_back(std::move(r));
    }
  } else {
    const auto arr = read_json(path);
    if (!arr.is_array()) throw FormatError(path.string() + ": expected an array of records");
    for (const auto& j : arr) report.rows.push_back(row_from_json(j));
  }
  if (std::filesystem::exists(meta_path(path))) {
    const auto meta = read_json(meta_path(path));
    report.asr_mode = parse_asr_mode(meta.value("asr_mode", "all"));
    report.target = meta.value("target", "");
    report.config_hash = meta.value("config_hash", "");
    for (const auto& d : meta.value("rows", nlohmann::json::array())) {
      report.details.push_back({d.at("epsilon").get<double>(), d.at("calibration_rmsd").get<double>(),
                                d.at("calibration_evaluations").get<int>(), d.at("seconds").get<double>(),
                                d.at("parallelism").get<int>()});
    }
  }
  return report;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "target: " << report.target << "  (ASR mode: " << asr_mode_name(report.asr_mode) << ")\n";
  out << pad("attacker", 22) << pad("type", 10) << pad("RMSD", 8) << pad("FG", 7) << pad("FGS", 7) << pad("PGD", 7)
      << pad("PGD time(s)", 13) << '\n';
  // One console line per attacker, attacks as columns.
  std::vector<std::string> order;
  std::map<std::string, std::map<AttackKind, const EvalRow*>> by_attacker;
  for (const auto& r : report.rows) {
    if (!by_attacker.count(r.attacker)) order.push_back(r.attacker);
    by_attacker[r.attacker][r.attack] = &r;
  }
  for (const auto& name : order) {
    const auto& cells = by_attacker[name];
    const EvalRow& any = *cells.begin()->second;
    double rmsd_sum = 0.0;
    for (const auto& [kind, row] : cells) rmsd_sum += row->rmsd;
    out << pad(name, 22) << pad(std::string(attacker_type_name(any.type)), 10)
        << pad(fixed(rmsd_sum / static_cast<double>(cells.size()), 2), 8);
    for (auto kind : {AttackKind::kFg, AttackKind::kFgs, AttackKind::kPgd}) {
      const auto it = cells.find(kind);
      out << pad(it == cells.end() ? "-" : fixed(it->second->asr, 2), 7);
    }
    out << pad(fixed(any.pgd_time_s, 2), 13) << '\n';
  }
  if (!report.rows.empty()) out << "clean accuracy of target: " << fixed(report.rows.front().clean_acc, 2) << '\n';
  return out.str();
}

EvalReport run_matrix(std::span<const Attacker> attackers, const Classifier& target, const Dataset& test,
                      const MatrixOptions& options) {
  if (test.size() == 0) throw ContractError("evaluation needs a non-empty test set");
  EvalReport report;
  report.asr_mode = options.asr_mode;
  report.target = target.name();
  report.config_hash = options.config_hash;

  const Tensor clean = test.all_images();
  const auto clean_preds = predict_all(target, clean);
  const double clean_acc = accuracy(clean_preds, test.labels());
  const Dataset calib = test.head(std::min(test.size(), options.calibration_images));
  const Tensor calib_x = calib.all_images();

  const auto persist = [&] {
    if (options.partial_report) write_report(report, *options.partial_report, ReportFormat::kCsv);
  };

  for (const Attacker& a : attackers) {
    if (a.model == nullptr) throw ContractError("attacker without a model");
    if (a.model->num_classes() != target.num_classes()) {
      throw ConfigError("attacker " + a.model->name() + " has " + std::to_string(a.model->num_classes()) +
                        " classes, target has " + std::to_string(target.num_classes()));
    }
    const std::size_t first_row = report.rows.size();
    for (AttackKind kind : options.attacks) {
      try {
        AttackSpec spec;
        spec.kind = kind;
        spec.iterations = options.pgd_iterations;
        RowDetail detail;
        const auto known = options.known_epsilon ? options.known_epsilon(a.model->name(), kind) : std::nullopt;
        if (known) {
          spec.epsilon = *known;
        } else {
          const auto cal = calibrate_epsilon(spec, *a.model, calib_x, calib.labels(), options.calibration);
          spec.epsilon = cal.epsilon;
          detail.calibration_rmsd = cal.achieved_rmsd;
          detail.calibration_evaluations = cal.evaluations;
        }
        detail.epsilon = spec.epsilon;
        const AttackOutput out = generate(*a.model, test, spec, options.generation);
        if (options.on_output) options.on_output(a, out);
        detail.seconds = out.seconds;
        detail.parallelism = out.parallelism;

        EvalRow row;
        row.attacker = a.model->name();
        row.type = a.type;
        row.attack = kind;
        row.rmsd = out.mean_rmsd;
        row.asr = asr(predict_all(target, out.images), test.labels(), options.asr_mode, clean_preds);
        row.clean_acc = clean_acc;
        row.kd = a.kd;
        report.rows.push_back(std::move(row));
        report.details.push_back(detail);
      } catch (...) {
        persist();
        throw;
      }
      persist();
    }
    // Every row of the attacker carries its pgd time.
    for (std::size_t i = first_row; i < report.rows.size(); ++i) {
      if (report.rows[i].attack == AttackKind::kPgd) {
        for (std::size_t k = first_row; k < report.rows.size(); ++k) report.rows[k].pgd_time_s = report.details[i].seconds;
      }
    }
  }
  persist();
  return report;
}

AblationReport ablation_from_matrix(const EvalReport& matrix, std::span<const Attacker> students,
                                    std::span<const double> student_test_acc) {
  if (students.size() != student_test_acc.size()) throw ContractError("ablation: one test accuracy per student");
  AblationReport out;
  out.asr_mode = matrix.asr_mode;
  out.config_hash = matrix.config_hash;
  for (std::size_t s = 0; s < students.size(); ++s) {
    if (!students[s].kd) throw ContractError("ablation student " + students[s].model->name() + " has no KD parameters");
    AblationRow row;
    row.strategy = students[s].kd->strategy;
    row.alpha = students[s].kd->alpha;
    row.tau = students[s].kd->tau;
    row.seed = students[s].kd->seed;
    row.test_acc = student_test_acc[s];
    int n = 0;
    for (const auto& r : matrix.rows) {
      if (r.attacker != students[s].model->name()) continue;
      row.rmsd += r.rmsd;
      ++n;
      row.pgd_time_s = r.pgd_time_s;
      (r.attack == AttackKind::kFg ? row.fg_asr : r.attack == AttackKind::kFgs ? row.fgs_asr : row.pgd_asr) = r.asr;
    }
    if (n == 0) throw ContractError("ablation: no matrix rows for " + students[s].model->name());
    row.rmsd /= n;
    out.rows.push_back(row);
  }
  return out;
}

AblationReport run_ablation(std::span<const Attacker> students, const Classifier& target, const Dataset& test,
                            const MatrixOptions& options) {
  std::vector<double> acc;
  for (const auto& s : students) acc.push_back(accuracy(*s.model, test));
  return ablation_from_matrix(run_matrix(students, target, test, options), students, acc);
}

void write_ablation(const AblationReport& report, const std::filesystem::path& path, ReportFormat format) {
  auto out = open_for_write(path);
  if (format == ReportFormat::kCsv) {
    out << kAblationColumns << '\n';
    for (const auto& r : report.rows) {
      out << strategy_name(r.strategy) << ',' << fixed(r.alpha, 4) << ',' << fixed(r.tau, 4) << ',' << r.seed << ','
          << fixed(r.rmsd, 4) << ',' << fixed(r.fg_asr, 4) << ',' << fixed(r.fgs_asr, 4) << ','
          << fixed(r.pgd_asr, 4) << ',' << fixed(r.test_acc, 4) << ',' << fixed(r.pgd_time_s, 4) << '\n';
    }
  } else {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : report.rows) {
      arr.push_back({{"strategy", strategy_name(r.strategy)},
                     {"alpha", round4(r.alpha)},
                     {"tau", round4(r.tau)},
                     {"seed", r.seed},
                     {"rmsd", round4(r.rmsd)},
                     {"fg_asr", round4(r.fg_asr)},
                     {"fgs_asr", round4(r.fgs_asr)},
                     {"pgd_asr", round4(r.pgd_asr)},
                     {"test_acc", round4(r.test_acc)},
                     {"pgd_time_s", round4(r.pgd_time_s)}});
    }
    out << arr.dump(2) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
  auto meta = open_for_write(meta_path(path));
  meta << nlohmann::json{{"asr_mode", asr_mode_name(report.asr_mode)}, {"config_hash", report.config_hash}}.dump(2)
       << '\n';
}

AblationReport read_ablation(const std::filesystem::path& path, ReportFormat format) {
  AblationReport report;
  if (format == ReportFormat::kCsv) {
    for (const auto& c : read_csv(path, kAblationColumns)) {
      report.rows.push_back({parse_strategy(c[0]), std::stod(c[1]), std::stod(c[2]), std::stoull(c[3]),
                             std::stod(c[4]), std::stod(c[5]), std::stod(c[6]), std::stod(c[7]), std::stod(c[8]),
                             std::stod(c[9])});
    }
  } else {
    for (const auto& j : read_json(path)) {
      report.rows.push_back({parse_strategy(j.at("strategy").get<std::string>()), j.at("alpha").get<double>(),
                             j.at("tau").get<double>(), j.at("seed").get<std::uint64_t>(), j.at("rmsd").get<double>(),
                             j.at("fg_asr").get<double>(), j.at("fgs_asr").get<double>(),
                             j.at("pgd_asr").get<double>(), j.at("test_acc").get<double>(),
                             j.at("pgd_time_s").get<double>()});
    }
  }
  if (std::filesystem::exists(meta_path(path))) {
    const auto meta = read_json(meta_path(path));
    report.asr_mode = parse_asr_mode(meta.value("asr_mode", "all"));
    report.config_hash = meta.value("config_hash", "");
  }
  return report;
}

std::string format_ablation_table(const AblationReport& report) {
  std::ostringstream out;
  out << pad("strategy", 12) << pad("alpha", 7) << pad("tau", 6) << pad("seed", 6) << pad("FG", 7) << pad("FGS", 7)
      << pad("PGD", 7) << pad("Acc", 7) << pad("PGD time(s)", 13) << '\n';
  for (const auto& r : report.rows) {
    out << pad(std::string(strategy_name(r.strategy)), 12) << pad(fixed(r.alpha, 2), 7) << pad(fixed(r.tau, 2), 6)
        << pad(std::to_string(r.seed), 6) << pad(fixed(r.fg_asr, 2), 7) << pad(fixed(r.fgs_asr, 2), 7)
        << pad(fixed(r.pgd_asr, 2), 7) << pad(fixed(r.test_acc, 2), 7) << pad(fixed(r.pgd_time_s, 2), 13) << '\n';
  }
  return out.str();
}

}  // namespace kdadv
