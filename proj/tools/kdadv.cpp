// Command-line entry point: kdadv <verb> [options]. See README.md.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "kdadv/error.hpp"
#include "kdadv/pipeline.hpp"

using namespace kdadv;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool serial = false;
  bool fast = false;
  std::string out;
};

RunConfig resolve(const Globals& g) {
  RunConfig c = g.fast ? fast_config() : default_config();
  if (!g.config_path.empty()) c = load_config(g.config_path, c);
  if (g.seed) {
    const std::uint64_t s = *g.seed;
    c.model_seed = s;
    c.data.split_seed = s;
    c.data.blobs.seed = s;
    c.slice_seed = s;
    for (auto& k : c.kd.seeds) k += s;
  }
  if (!g.out.empty()) c.out_dir = g.out;
  if (g.serial) c.serial = true;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-teacher distillation and adversarial transferability lab"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base seed for data, initialization and distillation");
  app.add_flag("--serial", g.serial, "Force fully serial execution");
  app.add_flag("--fast", g.fast, "Synthetic data, tiny models, 10 epochs");
  app.add_option("--out", g.out, "Output directory");

  auto* show = app.add_subcommand("config", "Print the resolved configuration as JSON");
  auto* prepare = app.add_subcommand("prepare", "Load or synthesize data, split and cache it");

  auto* train = app.add_subcommand("train", "Train the black box, teachers and students");
  std::vector<std::string> train_models;
  bool train_grid = false;
  train->add_option("--model", train_models,
                    "blackbox, teacher-residual, teacher-dense, student-curriculum or student-joint (default: all)");
  train->add_flag("--grid", train_grid, "Also train every student of the ablation grid");

  auto* attack = app.add_subcommand("attack", "Calibrate, generate and archive adversarial examples");
  std::vector<std::string> attackers;
  std::vector<std::string> kinds;
  std::optional<double> epsilon;
  attack->add_option("--attacker", attackers, "Attacker id (default: every attacker of the evaluation matrix)");
  attack->add_option("--kind", kinds, "fg, fgs or pgd (default: all configured)");
  attack->add_option("--epsilon", epsilon, "Skip calibration and use this epsilon");

  auto* evaluate = app.add_subcommand("evaluate", "Transferability matrix against the black box");
  auto* ablate = app.add_subcommand("ablate", "Distillation ablation grid against the black box");
  auto* slice = app.add_subcommand("slice", "Decision-boundary slices around a test image");
  std::optional<std::size_t> image;
  slice->add_option("--image", image, "Test image index");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = resolve(g);
    if (show->parsed()) {
      std::cout << to_json(config).dump(2) << '\n';
      return 0;
    }
    Pipeline p(config, std::cout);
    if (prepare->parsed()) {
      p.prepare();
    } else if (train->parsed()) {
      if (train_models.empty()) {
        p.train_all();
      } else {
        for (const auto& m : train_models) {
          if (m == "student-curriculum" || m == "student-joint") {
            KDConfig k = config.kd;
            k.strategy = m == "student-joint" ? Strategy::kJoint : Strategy::kCurriculum;
            p.train(k);
          } else if (m == kBlackboxId) {
            p.train(Role::kBlackboxMultibranch);
          } else {
            p.train(parse_role(m));
          }
        }
      }
      if (train_grid) p.train_grid();
    } else if (attack->parsed()) {
      if (attackers.empty()) attackers = p.attacker_ids();
      std::vector<AttackKind> ks;
      for (const auto& k : kinds) ks.push_back(parse_attack(k));
      if (ks.empty()) ks = config.attacks;
      for (const auto& a : attackers) {
        for (AttackKind k : ks) p.attack(a, k, epsilon);
      }
    } else if (evaluate->parsed()) {
      p.evaluate();
    } else if (ablate->parsed()) {
      p.ablate();
    } else if (slice->parsed()) {
      p.slice(image);
    }
  } catch (const std::exception& e) {
    std::cerr << "kdadv: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
