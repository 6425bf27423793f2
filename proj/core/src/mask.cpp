#include "uu/mask.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

namespace {
constexpr double kNormEps = 1e-12;
}

double alignment_objective(std::span<const double> target, std::span<const double> psi) {
  if (target.size() != psi.size()) throw ShapeError("alignment: length mismatch");
  const double nt = norm2(target);
  const double np = norm2(psi);
  if (nt < kNormEps || np < kNormEps) return 0.0;
  return dot(target, psi) / (nt * np);
}

double alignment_value_grad(const Matrix& basis, std::span<const double> target,
                            std::span<const double> weights, std::vector<double>* grad) {
  const std::size_t T = basis.rows;
  const std::size_t P = basis.cols;
  std::vector<double> psi(P, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (weights[t] != 0.0) axpy(weights[t], basis.row(t), psi);
  }
  const double nt = norm2(target);
  const double np = norm2(psi);
  if (grad) grad->assign(T, 0.0);
  if (nt < kNormEps || np < kNormEps) return 0.0;
  const double a = dot(target, psi);
  const double cos = a / (nt * np);
  if (grad) {
    // d cos / d w_t = (g_t . target) / (|target||psi|) - cos * (g_t . psi) / |psi|^2
    for (std::size_t t = 0; t < T; ++t) {
      auto g = basis.row(t);
      (*grad)[t] = dot(g, target) / (nt * np) - cos * dot(g, psi) / (np * np);
    }
  }
  return cos;
}

Matrix update_basis(const Estimator& est, const Dataset& train,
                    std::span<const std::size_t> candidates, UnlearnMethod method,
                    const PsiOptions& opts) {
  if (method != UnlearnMethod::first_order && method != UnlearnMethod::second_order) {
    throw ConfigError("unlearning method '" + std::string(to_string(method)) +
                      "' has no differentiable update; craft with first_order and use transfer mode");
  }
  Matrix basis(candidates.size(), est.param_count());
  std::size_t off = 0;
  for (const auto& m : est.models) {
    for (std::size_t t = 0; t < candidates.size(); ++t) {
      const std::size_t i = candidates[t];
      if (i >= train.size()) throw IndexError("candidate row outside training set");
      std::span<double> dst = basis.row(t).subspan(off, m.params.size());
      if (method == UnlearnMethod::first_order) {
        auto tr = forward_trace(m, train.row(i));
        backward(m, tr, cross_entropy_dlogits(tr.acts.back(), train.labels[i]), dst);
      } else {
        ForgetMask one = mask_from_positions({i}, std::vector<std::size_t>{0});
        auto d = model_update_psi(m, UnlearnMethod::second_order, train, one, opts);
        std::copy(d.begin(), d.end(), dst.begin());
      }
    }
    off += m.params.size();
  }
  return basis;
}

std::vector<double> attack_direction(const Estimator& est, const VictimState& victims,
                                     const AttackConfig& cfg) {
  auto g = total_attack_grad(est, victims, cfg);
  for (double& v : g) v = -v;
  return g;
}

double alignment_for_mask(const Estimator& est, const Dataset& train, const ForgetMask& mask,
                          const VictimState& victims, const AttackConfig& cfg) {
  const Matrix basis = update_basis(est, train, mask.candidates, cfg.unlearn_method);
  return alignment_value_grad(basis, attack_direction(est, victims, cfg), mask.weights, nullptr);
}

AscentOptions ascent_options(const AttackConfig& cfg) {
  AscentOptions o;
  o.budget = cfg.budget;
  o.restarts = cfg.restarts;
  o.steps = cfg.ascent_steps;
  o.lr = cfg.ascent_lr;
  o.seed = cfg.seed;
  return o;
}

MaskResult optimize_weights(const Matrix& basis, std::span<const double> target,
                            std::vector<std::size_t> candidates, const AscentOptions& opts) {
  const std::size_t T = basis.rows;
  if (candidates.size() != T) throw ShapeError("candidates/basis length mismatch");
  if (opts.budget > T) throw ConfigError("budget exceeds the number of candidates");
  if (opts.restarts < 1) throw ConfigError("restarts must be >= 1");

  MaskResult res;
  std::vector<double> best_w;
  double best_obj = -INFINITY;
  bool any_gradient = false;
  std::vector<double> grad;
  for (int r = 0; r < opts.restarts; ++r) {
    Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(r)));
    std::vector<double> w(T);
    for (double& v : w) v = rng.uniform();
    double obj = alignment_value_grad(basis, target, w, &grad);
    for (int s = 0; s < opts.steps; ++s) {
      const double gmax = norm_inf(grad);
      if (gmax == 0.0) break;
      any_gradient = true;
      const double step = opts.lr / gmax;
      for (std::size_t t = 0; t < T; ++t) w[t] = std::clamp(w[t] + step * grad[t], 0.0, 1.0);
      obj = alignment_value_grad(basis, target, w, &grad);
    }
    if (opts.steps > 0 && norm_inf(grad) > 0.0) any_gradient = true;
    if (obj > best_obj) {
      best_obj = obj;
      best_w = w;
      res.best_restart = r;
    }
  }
  res.objective = best_obj;
  res.degenerate = !any_gradient && opts.steps > 0;
  if (res.degenerate) res.warnings.push_back("alignment gradient vanished at every restart");
  res.mask = round_mask(std::move(candidates), std::move(best_w), opts.budget);
  return res;
}

MaskResult optimize_mask(const Estimator& est, const Dataset& train,
                         std::span<const std::size_t> candidates, const VictimState& victims,
                         const AttackConfig& cfg) {
  cfg.validate(candidates.size());
  const Matrix basis = update_basis(est, train, candidates, cfg.unlearn_method);
  const auto target = attack_direction(est, victims, cfg);
  auto res = optimize_weights(basis, target, {candidates.begin(), candidates.end()},
                              ascent_options(cfg));
  res.warnings.insert(res.warnings.begin(), victims.warnings.begin(), victims.warnings.end());
  return res;
}

MaskResult random_mask(std::span<const std::size_t> candidates, std::size_t budget,
                       std::uint64_t seed) {
  if (budget > candidates.size()) throw ConfigError("budget exceeds the number of candidates");
  std::vector<std::size_t> pos(candidates.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  pos.resize(budget);
  MaskResult res;
  res.mask = mask_from_positions({candidates.begin(), candidates.end()}, pos);
  res.mask.budget = budget;
  return res;
}

MaskResult label_attack_mask(const Estimator& est, const Dataset& train,
                             std::span<const std::size_t> candidates, const VictimState& victims,
                             const AttackConfig& cfg, LabelAttackKind kind,
                             std::span<const int> target_labels) {
  cfg.validate(candidates.size());
  std::vector<double> target;
  if (kind == LabelAttackKind::untargeted) {
    target = victim_cross_entropy_grad(est, victims, victims.predicted);
  } else {
    if (target_labels.size() != victims.size()) throw ShapeError("one target label per victim required");
    target = victim_cross_entropy_grad(est, victims, target_labels);
    for (double& v : target) v = -v;
  }
  const Matrix basis = update_basis(est, train, candidates, cfg.unlearn_method);
  return optimize_weights(basis, target, {candidates.begin(), candidates.end()}, ascent_options(cfg));
}

MaskResult transfer_attack(std::span<const Estimator> surrogates, const Dataset& train,
                           std::span<const std::size_t> candidates, const Dataset& victims,
                           const Dataset& holdout, const AttackConfig& cfg) {
  if (surrogates.empty()) throw ConfigError("transfer attack needs at least one surrogate");
  std::vector<double> avg(candidates.size(), 0.0);
  MaskResult out;
  double obj = 0.0;
  for (const auto& est : surrogates) {
    const auto vs = build_victims(est, victims, holdout, train, cfg);
    auto r = optimize_mask(est, train, candidates, vs, cfg);
    axpy(1.0 / static_cast<double>(surrogates.size()), r.mask.weights, avg);
    obj += r.objective / static_cast<double>(surrogates.size());
    out.degenerate = out.degenerate || r.degenerate;
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  out.objective = obj;
  out.mask = round_mask({candidates.begin(), candidates.end()}, std::move(avg), cfg.budget);
  return out;
}

void write_mask(const std::filesystem::path& path, const ForgetMask& mask) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "# candidate_row weight selected budget=" << mask.budget << '\n';
  out << std::setprecision(17);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    out << mask.candidates[t] << ' ' << mask.weights[t] << ' '
        << (mask.rounded() ? static_cast<int>(mask.selected[t]) : 0) << '\n';
  }
}

ForgetMask read_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  ForgetMask m;
  bool have_budget = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find("budget=");
      if (pos != std::string::npos) {
        m.budget = std::stoull(line.substr(pos + 7));
        have_budget = true;
      }
      continue;
    }
    std::istringstream ss(line);
    std::size_t row;
    double w;
    int bit;
    if (!(ss >> row >> w >> bit) || (bit != 0 && bit != 1)) {
      throw ConfigError("mask file " + path.string() + ": bad line " + std::to_string(lineno));
    }
    m.candidates.push_back(row);
    m.weights.push_back(w);
    m.selected.push_back(static_cast<std::uint8_t>(bit));
  }
  if (!have_budget) m.budget = static_cast<std::size_t>(std::count(m.selected.begin(), m.selected.end(), 1));
  m.validate();
  return m;
}

}  // namespace uu
