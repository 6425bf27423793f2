#include "uu/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "uu/checkpoint.hpp"
#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

using json = nlohmann::json;

Defense parse_defense(std::string_view tag) {
  if (tag == "none") return Defense::none;
  if (tag == "adversarial_training") return Defense::adversarial_training;
  throw ConfigError("unknown defense '" + std::string(tag) + "'");
}

std::string_view to_string(Defense d) {
  return d == Defense::none ? "none" : "adversarial_training";
}

CraftMethod parse_craft_method(std::string_view tag) {
  if (tag == "ours") return CraftMethod::ours;
  if (tag == "random") return CraftMethod::random;
  if (tag == "label_untargeted") return CraftMethod::label_untargeted;
  if (tag == "label_targeted") return CraftMethod::label_targeted;
  throw ConfigError("unknown craft method '" + std::string(tag) + "'");
}

std::string_view to_string(CraftMethod m) {
  switch (m) {
    case CraftMethod::ours: return "ours";
    case CraftMethod::random: return "random";
    case CraftMethod::label_untargeted: return "label_untargeted";
    case CraftMethod::label_targeted: return "label_targeted";
  }
  return "?";
}

std::vector<std::size_t> ExperimentConfig::arch() const {
  std::vector<std::size_t> a{data.d};
  a.insert(a.end(), hidden.begin(), hidden.end());
  a.push_back(data.classes);
  return a;
}

SeedPlan ExperimentConfig::seeds() const {
  SeedPlan s;
  s.data = mix_seed(seed, 1);
  s.split = mix_seed(seed, 2);
  s.init = mix_seed(seed, 3);
  s.train = mix_seed(seed, 4);
  s.attack = mix_seed(seed, 5);
  s.mc = mix_seed(seed, 6);
  s.unlearn = mix_seed(seed, 7);
  s.sisa = mix_seed(seed, 8);
  return s;
}

TrainConfig ExperimentConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = seeds().train;
  if (defense == Defense::adversarial_training) {
    t.adv_epsilon = defense_epsilon;
    t.adv_steps = defense_steps;
  }
  return t;
}

void ExperimentConfig::validate() const {
  if (hidden.empty()) throw ConfigError("model.hidden needs at least one layer");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("model.hidden widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (data.csv_path.empty()) {
    if (data.n == 0 || data.d == 0 || data.classes < 2) throw ConfigError("data.n, data.d must be positive and data.classes >= 2");
  }
  if (!(data.adversary_fraction > 0.0 && data.adversary_fraction <= 1.0)) {
    throw ConfigError("data.adversary_fraction must lie in (0, 1]");
  }
  if (data.victim_count == 0) throw ConfigError("data.victims must be positive");
  train.validate();
  if (estimator.kind == EstimatorKind::mc_dropout && dropout_rate <= 0.0) {
    throw ConfigError("estimator.kind = mc_dropout needs model.dropout > 0");
  }
  if (estimator.kind == EstimatorKind::ensemble && estimator.members < 2) {
    throw ConfigError("estimator.members must be >= 2 for an ensemble");
  }
  if (estimator.mc_samples < 1) throw ConfigError("estimator.mc_samples must be >= 1");
  if (conformal && !(conformal->alpha > 0.0 && conformal->alpha < 1.0)) {
    throw ConfigError("conformal.alpha must lie in (0, 1)");
  }
  if (!(attack.tau > 0.0)) throw ConfigError("unlearn.tau must be positive");
  if (unlearn.sisa_shards == 0 || unlearn.sisa_slices == 0) throw ConfigError("SISA shards and slices must be positive");
  if (unlearn.method == UnlearnMethod::sisa && estimator.kind != EstimatorKind::softmax) {
    throw ConfigError("unlearn.method = sisa requires estimator.kind = softmax");
  }
  if (ece_bins < 1) throw ConfigError("experiment.ece_bins must be >= 1");
  if (defense_epsilon < 0.0 || defense_steps < 1) throw ConfigError("defense.epsilon >= 0 and defense.steps >= 1 required");
  if (transfer.surrogate_widths.empty()) throw ConfigError("transfer.surrogate_widths must not be empty");
}

ExperimentConfig experiment_config(const ConfigFile& f) {
  ExperimentConfig c;
  c.seed = f.get_u64("experiment.seed", c.seed);
  c.out_dir = f.get_string("experiment.out_dir", c.out_dir.string());
  c.craft = parse_craft_method(f.get_string("experiment.craft", "ours"));
  c.baseline = f.get_bool("experiment.baseline", c.baseline);
  c.ece_bins = static_cast<int>(f.get_int("experiment.ece_bins", c.ece_bins));

  c.data.csv_path = f.get_string("data.csv", "");
  c.data.n = f.get_u64("data.n", c.data.n);
  c.data.d = f.get_u64("data.d", c.data.d);
  c.data.classes = f.get_u64("data.classes", c.data.classes);
  c.data.spread = f.get_double("data.spread", c.data.spread);
  c.data.fractions.train = f.get_double("data.train_fraction", c.data.fractions.train);
  c.data.fractions.holdout = f.get_double("data.holdout_fraction", c.data.fractions.holdout);
  c.data.fractions.test = f.get_double("data.test_fraction", c.data.fractions.test);
  c.data.adversary_fraction = f.get_double("data.adversary_fraction", c.data.adversary_fraction);
  c.data.victim_count = f.get_u64("data.victims", c.data.victim_count);

  c.hidden = f.get_sizes("model.hidden", c.hidden);
  c.dropout_rate = f.get_double("model.dropout", c.dropout_rate);

  c.train.epochs = static_cast<int>(f.get_int("train.epochs", c.train.epochs));
  c.train.batch_size = f.get_u64("train.batch_size", c.train.batch_size);
  c.train.learning_rate = f.get_double("train.lr", c.train.learning_rate);
  c.train.weight_decay = f.get_double("train.weight_decay", c.train.weight_decay);

  c.estimator.kind = parse_estimator_kind(f.get_string("estimator.kind", "softmax"));
  c.estimator.mc_samples = static_cast<int>(f.get_int("estimator.mc_samples", c.estimator.mc_samples));
  c.estimator.members = f.get_u64("estimator.members", c.estimator.members);

  const std::string cal = f.get_string("calibrator.kind", "none");
  if (cal != "none") c.calibrator = parse_calibrator_kind(cal);

  const std::string conf = f.get_string("conformal.kind", "none");
  ConformalSettings cs;
  cs.alpha = f.get_double("conformal.alpha", cs.alpha);
  cs.k_reg = static_cast<int>(f.get_int("conformal.k_reg", cs.k_reg));
  cs.lambda_reg = f.get_double("conformal.lambda_reg", cs.lambda_reg);
  if (conf != "none") {
    cs.kind = parse_conformal_kind(conf);
    c.conformal = cs;
  }

  auto& a = c.attack;
  a.mode = parse_attack_mode(f.get_string("attack.mode", std::string(to_string(a.mode))));
  a.lambda = f.get_double("attack.lambda", a.lambda);
  a.k_neighbors = static_cast<int>(f.get_int("attack.k", a.k_neighbors));
  a.xi_percentile = f.get_double("attack.xi", a.xi_percentile);
  a.margin_target = f.get_double("attack.margin", a.margin_target);
  a.budget = f.get_u64("attack.budget", a.budget);
  a.restarts = static_cast<int>(f.get_int("attack.restarts", a.restarts));
  a.ascent_steps = static_cast<int>(f.get_int("attack.steps", a.ascent_steps));
  a.ascent_lr = f.get_double("attack.lr", a.ascent_lr);

  auto& u = c.unlearn;
  u.method = parse_unlearn_method(f.get_string("unlearn.method", "first_order"));
  a.tau = f.get_double("unlearn.tau", a.tau);
  u.damping = f.get_double("unlearn.damping", u.damping);
  u.cg_iters = static_cast<int>(f.get_int("unlearn.cg_iters", u.cg_iters));
  u.cg_tol = f.get_double("unlearn.cg_tol", u.cg_tol);
  u.unroll_lr = f.get_double("unlearn.unroll_lr", c.train.learning_rate);
  u.unroll_epochs = static_cast<int>(f.get_int("unlearn.unroll_epochs", c.train.epochs));
  u.fisher_noise = f.get_double("unlearn.fisher_noise", u.fisher_noise);
  u.fisher_damping = f.get_double("unlearn.fisher_damping", u.fisher_damping);
  u.ssd_alpha = f.get_double("unlearn.ssd_alpha", u.ssd_alpha);
  u.ssd_lambda = f.get_double("unlearn.ssd_lambda", u.ssd_lambda);
  u.sisa_shards = f.get_u64("unlearn.sisa_shards", u.sisa_shards);
  u.sisa_slices = f.get_u64("unlearn.sisa_slices", u.sisa_slices);
  a.unlearn_method = u.method;

  c.defense = parse_defense(f.get_string("defense.kind", "none"));
  c.defense_epsilon = f.get_double("defense.epsilon", c.defense_epsilon);
  c.defense_steps = static_cast<int>(f.get_int("defense.steps", c.defense_steps));

  c.transfer.surrogate_widths = f.get_sizes("transfer.surrogate_widths", c.transfer.surrogate_widths);
  if (f.has("transfer.methods")) {
    c.transfer.methods.clear();
    for (const auto& tag : f.get_strings("transfer.methods", {})) {
      c.transfer.methods.push_back(parse_unlearn_method(tag));
    }
  }

  auto& t = c.theory;
  t.d = f.get_u64("theory.d", t.d);
  t.kappas = f.get_doubles("theory.kappas", t.kappas);
  t.trials = static_cast<int>(f.get_int("theory.trials", t.trials));
  t.p_grid = f.get_doubles("theory.p_grid", t.p_grid);
  t.bin_halfwidth = f.get_double("theory.h", t.bin_halfwidth);
  t.test_size = f.get_u64("theory.test_size", t.test_size);
  t.signal_scale = f.get_double("theory.signal_scale", t.signal_scale);
  t.seed = mix_seed(c.seed, 9);

  f.reject_unread();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config(ConfigFile::load(path));
}

namespace {

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

std::string describe(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "seed=" << c.seed << '\n'
     << "craft=" << to_string(c.craft) << " baseline=" << c.baseline << " bins=" << c.ece_bins << '\n'
     << "data=" << c.data.csv_path << ' ' << c.data.n << ' ' << c.data.d << ' ' << c.data.classes << ' '
     << c.data.spread << ' ' << c.data.fractions.train << ' ' << c.data.fractions.holdout << ' '
     << c.data.fractions.test << ' ' << c.data.adversary_fraction << ' ' << c.data.victim_count << '\n'
     << "model=" << join(c.hidden) << " dropout=" << c.dropout_rate << '\n'
     << "train=" << c.train.epochs << ' ' << c.train.batch_size << ' ' << c.train.learning_rate << ' '
     << c.train.weight_decay << '\n'
     << "estimator=" << to_string(c.estimator.kind) << ' ' << c.estimator.mc_samples << ' '
     << c.estimator.members << '\n'
     << "calibrator=" << (c.calibrator ? std::string(to_string(*c.calibrator)) : "none") << '\n';
  if (c.conformal) {
    os << "conformal=" << to_string(c.conformal->kind) << ' ' << c.conformal->alpha << ' '
       << c.conformal->k_reg << ' ' << c.conformal->lambda_reg << '\n';
  } else {
    os << "conformal=none\n";
  }
  const auto& a = c.attack;
  os << "attack=" << to_string(a.mode) << ' ' << a.lambda << ' ' << a.k_neighbors << ' '
     << a.xi_percentile << ' ' << a.margin_target << ' ' << a.budget << ' ' << a.restarts << ' '
     << a.ascent_steps << ' ' << a.ascent_lr << ' ' << a.tau << '\n';
  const auto& u = c.unlearn;
  os << "unlearn=" << to_string(u.method) << ' ' << u.damping << ' ' << u.cg_iters << ' ' << u.cg_tol
     << ' ' << u.unroll_lr << ' ' << u.unroll_epochs << ' ' << u.fisher_noise << ' '
     << u.fisher_damping << ' ' << u.ssd_alpha << ' ' << u.ssd_lambda << ' ' << u.sisa_shards << ' '
     << u.sisa_slices << '\n'
     << "defense=" << to_string(c.defense) << ' ' << c.defense_epsilon << ' ' << c.defense_steps << '\n'
     << "transfer=" << join(c.transfer.surrogate_widths);
  for (auto m : c.transfer.methods) os << ' ' << to_string(m);
  os << '\n';
  return os.str();
}

Dataset load_or_generate_data(const ExperimentConfig& cfg) {
  if (!cfg.data.csv_path.empty()) return read_csv(std::filesystem::path(cfg.data.csv_path));
  return gen_blobs(cfg.data.n, cfg.data.d, cfg.data.classes, cfg.data.spread, cfg.seeds().data);
}

Estimator train_estimator(const ExperimentConfig& cfg, const Dataset& train_set,
                          std::vector<ModelParams>* inits) {
  const auto seeds = cfg.seeds();
  const auto arch = cfg.arch();
  const std::size_t members = cfg.estimator.kind == EstimatorKind::ensemble ? cfg.estimator.members : 1;
  std::vector<ModelParams> models;
  for (std::size_t m = 0; m < members; ++m) {
    ModelParams init = init_model(arch, cfg.dropout_rate, mix_seed(seeds.init, m));
    TrainConfig tc = cfg.effective_train();
    tc.seed = mix_seed(seeds.train, m);
    if (inits) inits->push_back(init);
    models.push_back(train_from(std::move(init), train_set, tc));
  }
  switch (cfg.estimator.kind) {
    case EstimatorKind::softmax: return make_softmax(std::move(models.front()));
    case EstimatorKind::mc_dropout:
      return make_mc_dropout(std::move(models.front()), cfg.estimator.mc_samples, seeds.mc);
    case EstimatorKind::ensemble: return make_ensemble(std::move(models));
  }
  throw ConfigError("unknown estimator kind");
}

namespace {

std::vector<double> deployed_scores(const Deployed& model, std::span<const double> x) {
  if (!model.sisa) return estimator_scores(model.estimator, x);
  const ProbVector p = sisa_predict(*model.sisa, x);
  std::vector<double> s(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) s[c] = std::log(std::max(p[c], 1e-300));
  return s;
}

ProbVector deployed_probs(const Deployed& model, const std::optional<CalibratorParams>& cal,
                          std::span<const double> x) {
  if (cal) return apply_calibrator(*cal, deployed_scores(model, x));
  if (model.sisa) return sisa_predict(*model.sisa, x);
  return estimate(model.estimator, x);
}

ShardedModel train_sisa(const ExperimentConfig& cfg, const Dataset& train_set) {
  const auto seeds = cfg.seeds();
  return sisa_train(train_set, cfg.unlearn.sisa_shards, cfg.unlearn.sisa_slices, cfg.arch(),
                    cfg.dropout_rate, seeds.init, cfg.effective_train(), seeds.sisa);
}

}  // namespace

Deployment prepare(const ExperimentConfig& cfg) { return prepare(cfg, load_or_generate_data(cfg)); }

Deployment prepare(const ExperimentConfig& cfg, Dataset data) {
  data.validate();
  if (data.dim() != cfg.data.d || data.class_count != cfg.data.classes) {
    throw ShapeError("dataset shape (d=" + std::to_string(data.dim()) + ", C=" +
                     std::to_string(data.class_count) + ") does not match data.d / data.classes");
  }
  const auto seeds = cfg.seeds();
  Deployment dep;
  dep.splits = split(data, cfg.data.fractions, cfg.data.adversary_fraction, cfg.data.victim_count,
                     seeds.split);
  dep.train = data.subset(dep.splits.train);
  dep.holdout = data.subset(dep.splits.holdout);
  dep.victims = data.subset(dep.splits.victims);
  dep.test = data.subset(dep.splits.test);
  dep.candidates = positions_in(dep.splits.train, dep.splits.adversary);
  dep.data = std::move(data);

  dep.model.estimator = train_estimator(cfg, dep.train, &dep.inits);
  if (cfg.unlearn.method == UnlearnMethod::sisa) dep.model.sisa = train_sisa(cfg, dep.train);

  if (cfg.calibrator) {
    Matrix scores(dep.holdout.size(), dep.holdout.class_count);
    for (std::size_t i = 0; i < dep.holdout.size(); ++i) {
      const auto s = deployed_scores(dep.model, dep.holdout.row(i));
      std::copy(s.begin(), s.end(), scores.row(i).begin());
    }
    dep.calibrator = fit_calibrator(*cfg.calibrator, scores, dep.holdout.labels);
  }
  if (cfg.conformal) {
    const auto probs = predict_all(dep.model, dep.calibrator, dep.holdout);
    dep.conformal = fit_conformal(cfg.conformal->kind, probs, dep.holdout.labels, cfg.conformal->alpha,
                                  cfg.conformal->k_reg, cfg.conformal->lambda_reg);
  }
  return dep;
}

std::vector<ProbVector> predict_all(const Deployed& model,
                                    const std::optional<CalibratorParams>& calibrator,
                                    const Dataset& data) {
  std::vector<ProbVector> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(deployed_probs(model, calibrator, data.row(i)));
  return out;
}

Report evaluate(const Deployment& dep, const Deployed& model, const Dataset& eval,
                std::span<const int> labels_before, int bins, std::vector<ProbVector>* probs_out) {
  const auto probs = predict_all(model, dep.calibrator, eval);
  Report r;
  r.ece = ece(probs, eval.labels, bins);
  r.ace = ace(probs, eval.labels, std::min<int>(bins, static_cast<int>(eval.size())));
  r.brier = brier(probs, eval.labels);
  r.accuracy = top_label_accuracy(probs, eval.labels);
  if (dep.conformal) {
    double covered = 0.0, size = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const auto set = predict_set(*dep.conformal, probs[i]);
      size += static_cast<double>(set.size());
      for (auto c : set) {
        if (static_cast<int>(c) == eval.labels[i]) covered += 1.0;
      }
    }
    r.coverage = covered / static_cast<double>(probs.size());
    r.avg_set_size = size / static_cast<double>(probs.size());
  }
  if (!labels_before.empty()) {
    std::vector<int> after;
    for (const auto& p : probs) after.push_back(static_cast<int>(p.top_label()));
    r.label_preservation = label_preservation(labels_before, after);
  }
  if (probs_out) *probs_out = probs;
  return r;
}

VictimState victim_state(const ExperimentConfig& cfg, const Deployment& dep) {
  AttackConfig a = cfg.attack;
  a.seed = cfg.seeds().attack;
  return build_victims(dep.model.estimator, dep.victims, dep.holdout, dep.train, a);
}

namespace {

// Crafting needs a differentiable update; other methods are attacked through
// the first-order proxy.
UnlearnMethod crafting_method(UnlearnMethod m) {
  return m == UnlearnMethod::second_order ? m : UnlearnMethod::first_order;
}

}  // namespace

MaskResult craft(const ExperimentConfig& cfg, const Deployment& dep, const VictimState& victims,
                 CraftMethod method) {
  AttackConfig a = cfg.attack;
  a.seed = cfg.seeds().attack;
  a.unlearn_method = crafting_method(cfg.unlearn.method);
  if (a.budget == 0) {
    MaskResult r;
    r.mask = round_mask(dep.candidates, std::vector<double>(dep.candidates.size(), 0.0), 0);
    return r;
  }
  switch (method) {
    case CraftMethod::ours: return optimize_mask(dep.model.estimator, dep.train, dep.candidates, victims, a);
    case CraftMethod::random: return random_mask(dep.candidates, a.budget, a.seed);
    case CraftMethod::label_untargeted:
      return label_attack_mask(dep.model.estimator, dep.train, dep.candidates, victims, a,
                               LabelAttackKind::untargeted);
    case CraftMethod::label_targeted: {
      // Target: the runner-up class of each victim.
      std::vector<int> targets;
      for (std::size_t v = 0; v < victims.size(); ++v) {
        const ProbVector p = estimate(dep.model.estimator, victims.features.row(v));
        int best = -1;
        for (std::size_t c = 0; c < p.size(); ++c) {
          if (static_cast<int>(c) == victims.predicted[v]) continue;
          if (best < 0 || p[c] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        }
        targets.push_back(best);
      }
      return label_attack_mask(dep.model.estimator, dep.train, dep.candidates, victims, a,
                               LabelAttackKind::targeted, targets);
    }
  }
  throw ConfigError("unknown craft method");
}

Deployed apply_unlearning(const ExperimentConfig& cfg, const Deployment& dep, const ForgetMask& mask,
                          UnlearnMethod method, std::vector<std::string>* warnings) {
  const auto forget = mask.forget_set();
  if (forget.empty()) return dep.model;
  const auto& u = cfg.unlearn;
  Deployed out = dep.model;
  if (method == UnlearnMethod::sisa) {
    if (!dep.model.sisa) throw ConfigError("SISA unlearning needs a SISA-trained deployment");
    out.sisa = sisa_unlearn(*dep.model.sisa, dep.train, forget);
    return out;
  }
  out.sisa.reset();
  const std::uint64_t useed = cfg.seeds().unlearn;
  for (std::size_t m = 0; m < out.estimator.models.size(); ++m) {
    const ModelParams& theta = dep.model.estimator.models[m];
    ModelParams& dst = out.estimator.models[m];
    switch (method) {
      case UnlearnMethod::first_order:
        dst = unlearn_first_order(theta, dep.train, mask, cfg.attack.tau);
        break;
      case UnlearnMethod::second_order: {
        auto r = unlearn_second_order(theta, dep.train, mask, u.damping, u.cg_iters, u.cg_tol);
        if (!r.converged && warnings) {
          warnings->push_back("conjugate gradients stopped at relative residual " +
                              std::to_string(r.relative_residual) + " (member " + std::to_string(m) + ")");
        }
        dst = std::move(r.model);
        break;
      }
      case UnlearnMethod::unrolling: {
        const double lr = u.unroll_lr / static_cast<double>(cfg.train.batch_size);
        dst = unlearn_unrolling(theta, dep.inits.at(m), dep.train, mask, lr, u.unroll_epochs);
        break;
      }
      case UnlearnMethod::fisher:
        dst = unlearn_fisher(theta, dep.train, mask, u.fisher_noise, u.fisher_damping, mix_seed(useed, m));
        break;
      case UnlearnMethod::ssd:
        dst = unlearn_ssd(theta, dep.train, mask, u.ssd_alpha, u.ssd_lambda);
        break;
      case UnlearnMethod::sisa:
        break;
    }
  }
  return out;
}

Increments increments(const Report& pre, const Report& post) {
  auto ratio = [](double a, double b) -> std::optional<double> {
    if (a == 0.0) return std::nullopt;
    return (b - a) / a;
  };
  Increments inc;
  inc.ece = ratio(pre.ece, post.ece);
  inc.ace = ratio(pre.ace, post.ace);
  inc.brier = ratio(pre.brier, post.brier);
  inc.accuracy = ratio(pre.accuracy, post.accuracy);
  inc.coverage = ratio(pre.coverage, post.coverage);
  inc.avg_set_size = ratio(pre.avg_set_size, post.avg_set_size);
  return inc;
}

namespace {

json report_json(const Report& r, bool conformal) {
  json j;
  j["ece"] = r.ece;
  j["ace"] = r.ace;
  j["brier"] = r.brier;
  j["accuracy"] = r.accuracy;
  j["label_preservation"] = r.label_preservation;
  j["coverage"] = conformal ? json(r.coverage) : json(nullptr);
  j["avg_set_size"] = conformal ? json(r.avg_set_size) : json(nullptr);
  return j;
}

json increments_json(const Increments& inc, bool conformal) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["ece"] = opt(inc.ece);
  j["ace"] = opt(inc.ace);
  j["brier"] = opt(inc.brier);
  j["accuracy"] = opt(inc.accuracy);
  j["coverage"] = conformal ? opt(inc.coverage) : json(nullptr);
  j["avg_set_size"] = conformal ? opt(inc.avg_set_size) : json(nullptr);
  return j;
}

void write_reliability(std::ostream& out, const std::vector<ProbVector>& pre,
                       const std::vector<ProbVector>& post, std::span<const int> labels, int bins) {
  out << "stage,lower,upper,count,accuracy,confidence\n";
  out << std::setprecision(17);
  auto dump = [&](const char* stage, const std::vector<ProbVector>& p) {
    for (const auto& b : reliability_bins(p, labels, bins)) {
      out << stage << ',' << b.lower << ',' << b.upper << ',' << b.count << ',' << b.accuracy << ','
          << b.confidence << '\n';
    }
  };
  dump("pre", pre);
  dump("post", post);
}

void save_deployed(const std::filesystem::path& dir, const std::string& stem, const Deployed& m) {
  if (m.sisa) {
    save_sharded(dir / (stem + "_sisa"), *m.sisa);
    return;
  }
  for (std::size_t i = 0; i < m.estimator.models.size(); ++i) {
    save_model(dir / (stem + "_" + std::to_string(i) + ".uulm"), m.estimator.models[i]);
  }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_artifacts) {
  cfg.validate();
  json timings;
  auto t0 = Clock::now();
  Deployment dep = prepare(cfg);
  timings["prepare"] = seconds_since(t0);

  ExperimentResult res;
  res.warnings = dep.warnings;
  std::vector<ProbVector> pre_probs, post_probs;
  res.pre = evaluate(dep, dep.model, dep.victims, {}, cfg.ece_bins, &pre_probs);
  std::vector<int> before;
  for (const auto& p : pre_probs) before.push_back(static_cast<int>(p.top_label()));

  t0 = Clock::now();
  const VictimState victims = victim_state(cfg, dep);
  res.warnings.insert(res.warnings.end(), victims.warnings.begin(), victims.warnings.end());
  res.mask = craft(cfg, dep, victims, cfg.craft);
  res.warnings.insert(res.warnings.end(), res.mask.warnings.begin(), res.mask.warnings.end());
  timings["craft"] = seconds_since(t0);

  t0 = Clock::now();
  const Deployed post = apply_unlearning(cfg, dep, res.mask.mask, cfg.unlearn.method, &res.warnings);
  timings["unlearn"] = seconds_since(t0);

  t0 = Clock::now();
  res.post = evaluate(dep, post, dep.victims, before, cfg.ece_bins, &post_probs);
  if (cfg.baseline && cfg.craft != CraftMethod::random && cfg.attack.budget > 0) {
    const MaskResult rnd = craft(cfg, dep, victims, CraftMethod::random);
    const Deployed rpost = apply_unlearning(cfg, dep, rnd.mask, cfg.unlearn.method, &res.warnings);
    res.baseline = BaselineRun{CraftMethod::random, evaluate(dep, rpost, dep.victims, before, cfg.ece_bins)};
  }
  timings["evaluate"] = seconds_since(t0);

  const bool conf = dep.conformal.has_value();
  const auto seeds = cfg.seeds();
  json doc;
  doc["config_hash"] = fnv1a_hex(describe(cfg));
  doc["seeds"] = {{"master", cfg.seed},     {"data", seeds.data},     {"split", seeds.split},
                  {"init", seeds.init},     {"train", seeds.train},   {"attack", seeds.attack},
                  {"mc", seeds.mc},         {"unlearn", seeds.unlearn}, {"sisa", seeds.sisa}};
  doc["craft"] = std::string(to_string(cfg.craft));
  doc["unlearn_method"] = std::string(to_string(cfg.unlearn.method));
  doc["pre"] = report_json(res.pre, conf);
  doc["post"] = report_json(res.post, conf);
  doc["increments"] = increments_json(increments(res.pre, res.post), conf);
  doc["label_preservation"] = res.post.label_preservation;
  doc["mask_objective"] = res.mask.objective;
  doc["forget_set_size"] = res.mask.mask.forget_set().size();
  if (res.baseline) {
    doc["baseline"] = {{"method", std::string(to_string(res.baseline->method))},
                       {"post", report_json(res.baseline->post, conf)},
                       {"increments", increments_json(increments(res.pre, res.baseline->post), conf)}};
  }
  doc["mask_path"] = write_artifacts ? "mask.txt" : "";
  doc["warnings"] = res.warnings;

  if (write_artifacts) {
    t0 = Clock::now();
    const auto& dir = cfg.out_dir;
    std::filesystem::create_directories(dir);
    write_dataset(dir / "data.uuad", dep.data);
    save_deployed(dir, "model_pre", dep.model);
    save_deployed(dir, "model_post", post);
    if (dep.calibrator) save_calibrator(dir / "calibrator.uucal", *dep.calibrator);
    write_mask(dir / "mask.txt", res.mask.mask);
    std::ofstream rel(dir / "reliability.csv");
    write_reliability(rel, pre_probs, post_probs, dep.victims.labels, cfg.ece_bins);
    timings["write"] = seconds_since(t0);
  }
  doc["timings"] = timings;
  res.report_json = doc.dump(2) + "\n";
  if (write_artifacts) {
    std::ofstream out(cfg.out_dir / "report.json");
    out << res.report_json;
    if (!out) throw Error("cannot write " + (cfg.out_dir / "report.json").string());
  }
  return res;
}

std::vector<TransferRow> run_transfer(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig base = cfg;
  base.unlearn.method = UnlearnMethod::first_order;
  base.estimator.kind = EstimatorKind::softmax;
  Deployment dep = prepare(base);
  AttackConfig a = base.attack;
  a.seed = base.seeds().attack;
  a.unlearn_method = UnlearnMethod::first_order;

  auto pre_labels = [&](const Deployed& m, Report* pre) {
    std::vector<ProbVector> probs;
    *pre = evaluate(dep, m, dep.victims, {}, cfg.ece_bins, &probs);
    std::vector<int> out;
    for (const auto& p : probs) out.push_back(static_cast<int>(p.top_label()));
    return out;
  };

  std::vector<TransferRow> rows;
  TransferRow wb{"white_box", {}, {}};
  const auto before = pre_labels(dep.model, &wb.pre);
  const VictimState vs = victim_state(base, dep);
  const MaskResult white = craft(base, dep, vs, CraftMethod::ours);
  wb.post = evaluate(dep, apply_unlearning(base, dep, white.mask, UnlearnMethod::first_order), dep.victims,
                     before, cfg.ece_bins);
  rows.push_back(wb);

  // Surrogates: same data, different widths and seeds; the deployed model is
  // not consulted while crafting.
  std::vector<Estimator> surrogates;
  for (std::size_t i = 0; i < cfg.transfer.surrogate_widths.size(); ++i) {
    ExperimentConfig sc = base;
    sc.seed = mix_seed(cfg.seed, 1000 + i);
    sc.hidden.assign(base.hidden.size(), cfg.transfer.surrogate_widths[i]);
    surrogates.push_back(train_estimator(sc, dep.train));
  }
  const MaskResult tr = transfer_attack(surrogates, dep.train, dep.candidates, dep.victims, dep.holdout, a);
  rows.push_back({"transfer", wb.pre,
                  evaluate(dep, apply_unlearning(base, dep, tr.mask, UnlearnMethod::first_order), dep.victims,
                           before, cfg.ece_bins)});

  for (UnlearnMethod m : cfg.transfer.methods) {
    TransferRow row{std::string(to_string(m)), {}, {}};
    if (m == UnlearnMethod::sisa) {
      Deployment sdep = dep;
      sdep.model.sisa = train_sisa(base, dep.train);
      std::vector<ProbVector> probs;
      row.pre = evaluate(sdep, sdep.model, dep.victims, {}, cfg.ece_bins, &probs);
      std::vector<int> sb;
      for (const auto& p : probs) sb.push_back(static_cast<int>(p.top_label()));
      row.post = evaluate(sdep, apply_unlearning(base, sdep, white.mask, m), dep.victims, sb, cfg.ece_bins);
    } else {
      row.pre = wb.pre;
      row.post = evaluate(dep, apply_unlearning(base, dep, white.mask, m), dep.victims, before, cfg.ece_bins);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_transfer_csv(std::ostream& out, std::span<const TransferRow> rows) {
  out << "setting,pre_ece,post_ece,ece_increase,post_label_preservation\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.setting << ',' << r.pre.ece << ',' << r.post.ece << ',' << (r.post.ece - r.pre.ece) << ','
        << r.post.label_preservation << '\n';
  }
}

}  // namespace uu
