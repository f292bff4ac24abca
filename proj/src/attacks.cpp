#include "kdadv/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "kdadv/error.hpp"
#include "kdadv/loss.hpp"
#include "kdadv/metrics.hpp"
#include "kdadv/model.hpp"

namespace kdadv {

std::string_view attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFg: return "fg";
    case AttackKind::kFgs: return "fgs";
    case AttackKind::kPgd: return "pgd";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  if (name == "fg") return AttackKind::kFg;
  if (name == "fgs") return AttackKind::kFgs;
  if (name == "pgd") return AttackKind::kPgd;
  throw ConfigError("unknown attack '" + std::string(name) + "' (fg|fgs|pgd)");
}

double AttackSpec::effective_step() const { return step_size.value_or(2.5 * epsilon / iterations); }

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
  if (!(clip_lo < clip_hi)) throw ConfigError("attack clip range is empty");
  if (kind == AttackKind::kPgd) {
    if (iterations < 1) throw ConfigError("pgd needs at least one iteration");
    if (step_size && !(*step_size > 0.0)) throw ConfigError("pgd step size must be positive");
  }
}

Tensor sign_perturbation(const Tensor& grad, double epsilon) {
  Tensor out(grad.shape());
  const auto e = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const float g = grad[i];
    out[i] = g > 0.0f ? e : (g < 0.0f ? -e : 0.0f);
  }
  return out;
}

Tensor l2_perturbation(const Tensor& grad, double epsilon) {
  Tensor out(grad.shape());
  for (std::int64_t b = 0; b < grad.dim(0); ++b) {
    const auto g = grad.sample(b);
    double sq = 0.0;
    for (float v : g) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) continue;
    auto o = out.sample(b);
    const double scale = epsilon / norm;
    for (std::size_t i = 0; i < g.size(); ++i) o[i] = static_cast<float>(g[i] * scale);
  }
  return out;
}

namespace {

Tensor add_and_clip(const Tensor& x, const Tensor& delta, float lo, float hi) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + delta[i], lo, hi);
  return out;
}

}  // namespace

Tensor fgs(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, float lo, float hi) {
  if (epsilon == 0.0) return x;
  return add_and_clip(x, sign_perturbation(loss_input_gradient(model, x, y), epsilon), lo, hi);
}

Tensor fg(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, float lo, float hi) {
  if (epsilon == 0.0) return x;
  return add_and_clip(x, l2_perturbation(loss_input_gradient(model, x, y), epsilon), lo, hi);
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon, double step_size,
           int iterations, float lo, float hi) {
  if (iterations < 1) throw ContractError("pgd needs at least one iteration");
  if (epsilon == 0.0) return x;
  const auto eps = static_cast<float>(epsilon);
  Tensor xt = x;
  for (int t = 0; t < iterations; ++t) {
    const Tensor step = sign_perturbation(loss_input_gradient(model, xt, y), step_size);
    for (std::size_t i = 0; i < xt.size(); ++i) {
      const float moved = std::clamp(xt[i] + step[i], x[i] - eps, x[i] + eps);
      xt[i] = std::clamp(moved, lo, hi);
    }
  }
  return xt;
}

Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::kFg: return fg(model, x, y, spec.epsilon, spec.clip_lo, spec.clip_hi);
    case AttackKind::kFgs: return fgs(model, x, y, spec.epsilon, spec.clip_lo, spec.clip_hi);
    case AttackKind::kPgd:
      return pgd(model, x, y, spec.epsilon, spec.effective_step(), spec.iterations, spec.clip_lo, spec.clip_hi);
  }
  throw ContractError("unhandled attack kind");
}

// ---------------------------------------------------------------------------
// Ensemble

std::string_view ensemble_mode_name(EnsembleMode mode) {
  return mode == EnsembleMode::kLogits ? "logits" : "probabilities";
}

EnsembleMode parse_ensemble_mode(std::string_view name) {
  if (name == "logits") return EnsembleMode::kLogits;
  if (name == "probabilities") return EnsembleMode::kProbabilities;
  throw ConfigError("unknown ensemble mode '" + std::string(name) + "' (logits|probabilities)");
}

Ensemble::Ensemble(std::string name, std::vector<const Classifier*> members, std::vector<double> weights,
                   EnsembleMode mode)
    : name_(std::move(name)), members_(std::move(members)), weights_(std::move(weights)), mode_(mode) {
  if (members_.empty()) throw ConfigError("ensemble needs at least one member");
  if (weights_.size() != members_.size()) throw ConfigError("ensemble needs one weight per member");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ConfigError("ensemble weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("ensemble weights must sum to 1");
  num_classes_ = members_.front()->num_classes();
  for (const Classifier* m : members_) {
    if (m->num_classes() != num_classes_) {
      throw ConfigError("ensemble member " + m->name() + " has " + std::to_string(m->num_classes()) +
                        " classes, expected " + std::to_string(num_classes_));
    }
  }
}

Ensemble::Ensemble(std::string name, std::vector<const Classifier*> members, EnsembleMode mode)
    : Ensemble(std::move(name), members, std::vector<double>(members.size(), 1.0 / static_cast<double>(members.size())),
               mode) {}

namespace {

// Combined output from member logits: weighted mean logits, or the log of the
// weighted mean probabilities.
Tensor combine(std::span<const Tensor> member_logits, std::span<const double> weights, EnsembleMode mode) {
  const Shape& shape = member_logits.front().shape();
  std::vector<double> acc(member_logits.front().size(), 0.0);
  for (std::size_t m = 0; m < member_logits.size(); ++m) {
    const Tensor v = mode == EnsembleMode::kLogits ? member_logits[m] : softmax(member_logits[m]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[m] * v[i];
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<float>(mode == EnsembleMode::kLogits ? acc[i] : std::log(std::max(acc[i], 1e-30)));
  }
  return out;
}

// dLoss/dz_m for one member given dLoss/d(ensemble output).
Tensor member_grad(const Tensor& g, const Tensor& member_logits, const Tensor& combined, double w, EnsembleMode mode) {
  Tensor out(g.shape());
  if (mode == EnsembleMode::kLogits) {
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(w * g[i]);
    return out;
  }
  // out_k = log pbar_k, pbar = sum_m w_m softmax(z_m). With q = g / pbar:
  // dL/dz_mj = w_m * p_mj * (q_j - <q, p_m>).
  const Tensor p = softmax(member_logits);
  const auto K = g.dim(1);
  for (std::int64_t b = 0; b < g.dim(0); ++b) {
    const auto gb = g.sample(b);
    const auto pb = p.sample(b);
    const auto cb = combined.sample(b);
    std::vector<double> q(static_cast<std::size_t>(K));
    double qp = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      q[static_cast<std::size_t>(k)] = gb[k] / std::exp(static_cast<double>(cb[k]));
      qp += q[static_cast<std::size_t>(k)] * pb[k];
    }
    auto ob = out.sample(b);
    for (std::int64_t k = 0; k < K; ++k) ob[k] = static_cast<float>(w * pb[k] * (q[static_cast<std::size_t>(k)] - qp));
  }
  return out;
}

}  // namespace

Tensor Ensemble::logits(const Tensor& batch) const {
  std::vector<Tensor> zs;
  zs.reserve(members_.size());
  for (const Classifier* m : members_) zs.push_back(m->logits(batch));
  return combine(zs, weights_, mode_);
}

Tensor Ensemble::input_gradient(const Tensor& batch, const LogitGradFn& loss_grad) const {
  // Models are traced once and reused for the backward pass; other members
  // are queried for logits and then differentiated through their interface.
  std::vector<const Model*> as_model;
  std::vector<ForwardTrace> traces(members_.size());
  std::vector<Tensor> zs;
  for (std::size_t m = 0; m < members_.size(); ++m) {
    as_model.push_back(dynamic_cast<const Model*>(members_[m]));
    if (as_model[m] != nullptr) {
      traces[m] = as_model[m]->trace(batch);
      zs.push_back(traces[m].logits());
    } else {
      zs.push_back(members_[m]->logits(batch));
    }
  }
  const Tensor combined = combine(zs, weights_, mode_);
  const Tensor g = loss_grad(combined);
  if (g.shape() != combined.shape()) throw ContractError("ensemble: loss gradient shape mismatch");

  Tensor total(batch.shape());
  for (std::size_t m = 0; m < members_.size(); ++m) {
    const Tensor gm = member_grad(g, zs[m], combined, weights_[m], mode_);
    Tensor dx;
    if (as_model[m] != nullptr) {
      dx = Tensor(batch.shape());
      as_model[m]->backward(traces[m], gm, nullptr, &dx);
    } else {
      dx = members_[m]->input_gradient(batch, [&](const Tensor&) { return gm; });
    }
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += dx[i];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Calibration

double epsilon_upper_bound(AttackKind kind, const Shape& image_shape) {
  if (kind == AttackKind::kFg) return 255.0 * std::sqrt(static_cast<double>(shape_size(image_shape)));
  return 255.0;
}

CalibrationResult calibrate_epsilon(const AttackSpec& base, const Classifier& model, const Tensor& x,
                                    std::span<const int> y, const CalibrationOptions& options) {
  if (x.dim(0) == 0) throw ContractError("calibration needs at least one image");
  if (!(options.tolerance > 0.0)) throw ConfigError("calibration tolerance must be positive");
  const Shape image_shape(x.shape().begin() + 1, x.shape().end());

  CalibrationResult result;
  result.bracket_lo = 0.0;
  result.bracket_hi = epsilon_upper_bound(base.kind, image_shape);
  if (options.target_rmsd - options.tolerance <= 0.0) return result;  // epsilon 0 already qualifies

  std::map<double, double> seen = {{0.0, 0.0}};
  const auto measure = [&](double eps) {
    AttackSpec spec = base;
    spec.epsilon = eps;
    const double r = rmsd(x, run_attack(model, x, y, spec));
    ++result.evaluations;
    const auto [it, inserted] = seen.emplace(eps, r);
    if (it != seen.begin() && std::prev(it)->second > r + options.monotonicity_slack) {
      throw CalibrationError("mean RMSD fell from " + std::to_string(std::prev(it)->second) + " to " +
                             std::to_string(r) + " as epsilon rose to " + std::to_string(eps));
    }
    if (std::next(it) != seen.end() && r > std::next(it)->second + options.monotonicity_slack) {
      throw CalibrationError("mean RMSD is not monotone in epsilon near " + std::to_string(eps));
    }
    return r;
  };

  const double top = measure(result.bracket_hi);
  if (top < options.target_rmsd - options.tolerance) {
    throw CalibrationError("target RMSD " + std::to_string(options.target_rmsd) + " unattainable: epsilon in [" +
                           std::to_string(result.bracket_lo) + ", " + std::to_string(result.bracket_hi) +
                           "] reaches at most " + std::to_string(top));
  }
  if (std::abs(top - options.target_rmsd) <= options.tolerance) {
    result.epsilon = result.bracket_hi;
    result.achieved_rmsd = top;
    return result;
  }
  double lo = result.bracket_lo, hi = result.bracket_hi;
  for (int i = 0; i < options.max_bisections; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double r = measure(mid);
    if (std::abs(r - options.target_rmsd) <= options.tolerance) {
      result.epsilon = mid;
      result.achieved_rmsd = r;
      result.bracket_lo = lo;
      result.bracket_hi = hi;
      return result;
    }
    (r < options.target_rmsd ? lo : hi) = mid;
  }
  throw CalibrationError("no epsilon within " + std::to_string(options.max_bisections) +
                         " bisections; final bracket [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

// ---------------------------------------------------------------------------
// Generation and archives

AttackOutput generate(const Classifier& attacker, const Dataset& data, const AttackSpec& spec,
                      const GenerateOptions& options) {
  spec.validate();
  if (options.batch_size == 0) throw ContractError("attack batch size must be at least 1");
  // Batches are materialized up front so the timed pass covers only gradient
  // computation, perturbation and projection.
  std::vector<Tensor> xs;
  std::vector<std::vector<int>> ys;
  for (std::size_t begin = 0; begin < data.size(); begin += options.batch_size) {
    const auto end = std::min(data.size(), begin + options.batch_size);
    xs.push_back(data.images(begin, end));
    ys.emplace_back(data.labels().begin() + static_cast<std::ptrdiff_t>(begin),
                    data.labels().begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (options.warmup_batch && !xs.empty()) run_attack(attacker, xs.front(), ys.front(), spec);

  std::vector<Tensor> adv;
  adv.reserve(xs.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < xs.size(); ++i) adv.push_back(run_attack(attacker, xs[i], ys[i], spec));
  const auto t1 = std::chrono::steady_clock::now();

  AttackOutput out;
  out.seconds = std::chrono::duration<double>(t1 - t0).count();
  out.attacker = attacker.name();
  out.spec = spec;
  if (adv.empty()) {
    Shape s{0};
    s.insert(s.end(), data.image_shape().begin(), data.image_shape().end());
    out.images = Tensor(std::move(s));
    return out;
  }
  out.images = stack_batches(adv);
  out.rmsd = per_image_rmsd(data.all_images(), out.images);
  double sum = 0.0;
  for (double r : out.rmsd) sum += r;
  out.mean_rmsd = sum / static_cast<double>(out.rmsd.size());
  return out;
}

namespace {

Dataset quantized(const AttackOutput& output, const Dataset& source) {
  std::vector<std::uint8_t> px(output.images.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::clamp(std::lround(output.images[i]), 0L, 255L));
  }
  return Dataset(source.image_shape(), source.num_classes(), source.split(), std::move(px),
                 std::vector<int>(source.labels().begin(), source.labels().end()));
}

}  // namespace

nlohmann::json attack_metadata(const AttackOutput& output) {
  nlohmann::json meta;
  meta["attacker"] = output.attacker;
  meta["attack"] = attack_name(output.spec.kind);
  meta["epsilon"] = output.spec.epsilon;
  if (output.spec.kind == AttackKind::kPgd) {
    meta["step_size"] = output.spec.effective_step();
    meta["iterations"] = output.spec.iterations;
  }
  meta["clip"] = {output.spec.clip_lo, output.spec.clip_hi};
  meta["count"] = output.rmsd.size();
  meta["mean_rmsd"] = output.mean_rmsd;
  meta["seconds"] = output.seconds;
  meta["parallelism"] = output.parallelism;
  return meta;
}

void write_attack_archive(const AttackOutput& output, const Dataset& source, const std::filesystem::path& bin_path,
                          const nlohmann::json& extra) {
  if (static_cast<std::size_t>(output.images.dim(0)) != source.size()) {
    throw ContractError("attack archive: image count differs from the source dataset");
  }
  const Dataset q = quantized(output, source);
  write_cifar_records(q, bin_path);
  nlohmann::json meta = attack_metadata(output);
  meta["mean_rmsd_quantized"] = rmsd(source.all_images(), q.all_images());
  meta.update(extra);
  auto json_path = bin_path;
  json_path.replace_extension(".json");
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + json_path.string());
  out << meta.dump(2) << '\n';
}

Dataset read_attack_archive(const std::filesystem::path& bin_path, const Dataset& source) {
  if (!std::filesystem::exists(bin_path)) throw MissingArtifact("attack archive " + bin_path.string());
  return read_cifar_records(bin_path, source.split(), source.image_shape(), source.num_classes());
}

}  // namespace kdadv
