#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "uu/errors.hpp"
#include "uu/mask.hpp"
#include "uu/rng.hpp"
#include "uu/train.hpp"

using namespace uu;

namespace {

// Input -> relu(x) -> logits [h * slope, 0]. At x = 1 the probabilities are
// [e^s, 1] / (e^s + 1); at x <= 0 they are uniform.
ModelParams ramp_model(double slope) {
  ModelParams m;
  m.arch = {1, 1, 2};
  m.params = {1.0, 0.0, slope, 0.0, 0.0, 0.0};
  return m;
}

Dataset column(std::vector<double> xs, std::vector<int> ys) {
  Dataset d;
  d.features = Matrix(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) d.features(i, 0) = xs[i];
  d.labels = std::move(ys);
  d.class_count = 2;
  return d;
}

VictimState one_victim(double x, VictimMode mode, std::vector<double> ref_xs) {
  VictimState vs;
  vs.features = Matrix(1, 1);
  vs.features(0, 0) = x;
  vs.predicted = {0};
  vs.true_labels = {0};
  vs.modes = {mode};
  vs.holdout = column(ref_xs, std::vector<int>(ref_xs.size(), 0));
  std::vector<std::size_t> all(ref_xs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  vs.reference = {all};
  return vs;
}

struct Scenario {
  Dataset train;
  Dataset victims;
  Dataset holdout;
  Estimator est;
  std::vector<std::size_t> candidates;
};

Scenario small_scenario(std::uint64_t seed) {
  Scenario s;
  const Dataset all = gen_blobs(160, 3, 3, 2.0, seed);
  std::vector<std::size_t> tr(100), ho(40), vi(20);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(ho.begin(), ho.end(), std::size_t{100});
  std::iota(vi.begin(), vi.end(), std::size_t{140});
  s.train = all.subset(tr);
  s.holdout = all.subset(ho);
  s.victims = all.subset(vi);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = seed;
  s.est = make_softmax(train({3, 6, 3}, 0.0, seed + 1, s.train, cfg));
  s.candidates.resize(40);
  std::iota(s.candidates.begin(), s.candidates.end(), std::size_t{0});
  return s;
}

AttackConfig small_cfg() {
  AttackConfig c;
  c.lambda = 1.0;
  c.k_neighbors = 5;
  c.budget = 5;
  c.restarts = 2;
  c.ascent_steps = 30;
  c.tau = 0.01;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("hinge losses on hand-built probabilities") {
  const Estimator e8 = make_softmax(ramp_model(std::log(4.0)));  // E(1) = [.8, .2]
  const Estimator e5 = make_softmax(ramp_model(0.0));            // E = [.5, .5]
  CHECK(attack_loss(e8, one_victim(1.0, VictimMode::under, {0.0}), 0.9) == doctest::Approx(0.6));
  CHECK(attack_loss(e8, one_victim(1.0, VictimMode::over, {0.0}), 0.9) == doctest::Approx(0.3));
  CHECK(attack_loss(e5, one_victim(1.0, VictimMode::under, {0.0}), 0.9) == 0.0);
  // Top class below its runner-up: under loss clamps at zero.
  const Estimator flip = make_softmax(ramp_model(-1.0));
  CHECK(attack_loss(flip, one_victim(1.0, VictimMode::under, {0.0}), 0.9) == 0.0);
}

TEST_CASE("KL regularizer and the combined loss") {
  const Estimator e9 = make_softmax(ramp_model(std::log(9.0)));  // E(1) = [.9, .1], E(0) = [.5, .5]
  const VictimState vs = one_victim(1.0, VictimMode::under, {0.0, -1.0});
  const double kl = regularizer_kl(e9, vs);
  CHECK(kl == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-12));
  CHECK(kl == doctest::Approx(0.3681).epsilon(1e-4));
  CHECK(regularizer_kl(e9, one_victim(1.0, VictimMode::under, {1.0})) == doctest::Approx(0.0).epsilon(1e-15));
  AttackConfig cfg;
  cfg.lambda = 1.0;
  const double l1 = attack_loss(e9, vs, cfg.margin_target);
  CHECK(total_attack_loss(e9, vs, cfg) == doctest::Approx(l1 + kl));
  cfg.lambda = 0.0;
  CHECK(total_attack_loss(e9, vs, cfg) == l1);

  const Scenario s = small_scenario(1);
  const VictimState real = build_victims(s.est, s.victims, s.holdout, s.train, small_cfg());
  CHECK(regularizer_kl(s.est, real) >= 0.0);
}

TEST_CASE("proximity: identical neighbours, unit distance, brute-force KNN") {
  Matrix pool(3, 2);
  pool(0, 0) = 1.0;
  pool(1, 0) = 1.0;
  pool(2, 0) = 5.0;
  const std::vector<double> h{1.0, 0.0};
  CHECK(proximity_hidden(h, pool, 2) == 1.0);
  Matrix one(1, 2);
  one(0, 1) = 1.0;
  CHECK(proximity_hidden(std::vector<double>{0.0, 0.0}, one, 1) == doctest::Approx(std::exp(-1.0)));
  CHECK_THROWS_AS(proximity_hidden(h, pool, 0), ConfigError);

  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Matrix p(150, 4);
    for (double& v : p.data) v = std::round(3.0 * rng.normal());  // integer grid forces ties
    std::vector<double> q(4);
    for (double& v : q) v = std::round(3.0 * rng.normal());
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < p.rows; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < 4; ++j) d += (p(i, j) - q[j]) * (p(i, j) - q[j]);
      all.emplace_back(d, i);
    }
    std::sort(all.begin(), all.end());
    const auto got = nearest_neighbors(q, p, 7);
    for (std::size_t k = 0; k < 7; ++k) CHECK(got[k] == all[k].second);
    double mean = 0.0;
    for (std::size_t k = 0; k < 7; ++k) mean += std::sqrt(all[k].first) / 7.0;
    CHECK(proximity_hidden(q, p, 7) == doctest::Approx(std::exp(-mean)).epsilon(1e-12));
  }
}

TEST_CASE("reference sets from percentile thresholds") {
  const std::vector<double> prox{0.1, 0.9, 0.3, 0.7, 0.5, 0.2, 0.8, 0.4, 0.95, 0.05};
  const std::vector<int> pred{0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
  auto top = reference_set(prox, pred, 0, 75.0, VictimMode::under);
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<std::size_t>{1, 6});
  CHECK(reference_set(prox, pred, 0, 0.0, VictimMode::under).size() == 8);
  auto low = reference_set(prox, pred, 0, 75.0, VictimMode::over);
  std::sort(low.begin(), low.end());
  CHECK(low == std::vector<std::size_t>{0, 5});
  CHECK_THROWS_AS(reference_set(prox, pred, 2, 50.0, VictimMode::under), DegenerateDataError);

  // Membership agrees with recomputing every proximity from scratch.
  const Scenario s = small_scenario(4);
  const AttackConfig cfg = small_cfg();
  const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
  const auto& m = s.est.models[0];
  std::vector<double> hp;
  std::vector<int> hpred;
  for (std::size_t i = 0; i < s.holdout.size(); ++i) {
    hp.push_back(proximity(m, s.holdout.row(i), s.train, cfg.k_neighbors));
    hpred.push_back(static_cast<int>(estimate(s.est, s.holdout.row(i)).top_label()));
  }
  for (std::size_t v = 0; v < vs.size(); ++v) {
    std::vector<double> same;
    for (std::size_t i = 0; i < hp.size(); ++i) {
      if (hpred[i] == vs.predicted[v]) same.push_back(hp[i]);
    }
    if (same.empty()) continue;
    std::sort(same.begin(), same.end());
    const double q = vs.modes[v] == VictimMode::under ? 0.75 : 0.25;
    const double pos = q * (same.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double cut = same[lo] + (pos - lo) * (same[std::min(lo + 1, same.size() - 1)] - same[lo]);
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < hp.size(); ++i) {
      if (hpred[i] != vs.predicted[v]) continue;
      if (vs.modes[v] == VictimMode::under ? hp[i] >= cut : hp[i] <= cut) want.push_back(i);
    }
    if (!want.empty()) CHECK(vs.reference[v] == want);
  }
}

TEST_CASE("victim modes follow pre-attack correctness") {
  const Scenario s = small_scenario(5);
  AttackConfig cfg = small_cfg();
  const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
  for (std::size_t v = 0; v < vs.size(); ++v) {
    const bool right = vs.predicted[v] == vs.true_labels[v];
    CHECK(vs.modes[v] == (right ? VictimMode::under : VictimMode::over));
  }
  cfg.mode = AttackMode::under;
  for (auto m : build_victims(s.est, s.victims, s.holdout, s.train, cfg).modes) CHECK(m == VictimMode::under);
}

TEST_CASE("gradient of the attack loss matches finite differences") {
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const Scenario s = small_scenario(seed);
    AttackConfig cfg = small_cfg();
    const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
    const auto g = total_attack_grad(s.est, vs, cfg);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& p) {
          Estimator e = s.est;
          e.set_flat_params(p);
          return total_attack_loss(e, vs, cfg);
        },
        s.est.flat_params());
    CHECK(oracle::max_rel_err(g, fd) <= 1e-4);
    const auto ce = victim_cross_entropy_grad(s.est, vs, vs.predicted);
    const auto ce_fd = oracle::fd_gradient(
        [&](const std::vector<double>& p) {
          Estimator e = s.est;
          e.set_flat_params(p);
          return victim_cross_entropy(e, vs, vs.predicted);
        },
        s.est.flat_params());
    CHECK(oracle::max_rel_err(ce, ce_fd) <= 1e-4);
  }
}

TEST_CASE("cosine alignment: parallel, antiparallel, orthogonal, degenerate") {
  const std::vector<double> a{1.0, 2.0}, b{2.0, 4.0}, c{-3.0, -6.0}, o{2.0, -1.0}, z{0.0, 0.0};
  CHECK(alignment_objective(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(alignment_objective(a, c) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(std::abs(alignment_objective(a, o)) <= 1e-12);
  CHECK(alignment_objective(a, z) == 0.0);
}

TEST_CASE("alignment gradient in the weights matches finite differences") {
  Rng rng(6);
  Matrix basis(12, 9);
  for (double& v : basis.data) v = rng.normal();
  std::vector<double> target(9), w(12);
  for (double& v : target) v = rng.normal();
  for (double& v : w) v = rng.uniform();
  std::vector<double> grad;
  alignment_value_grad(basis, target, w, &grad);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& x) { return alignment_value_grad(basis, target, x, nullptr); }, w);
  CHECK(oracle::max_rel_err(grad, fd) <= 1e-6);
}

TEST_CASE("tau rescales psi but not the alignment") {
  const Scenario s = small_scenario(7);
  const AttackConfig cfg = small_cfg();
  const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
  const auto target = attack_direction(s.est, vs, cfg);
  Rng rng(8);
  std::vector<double> w(s.candidates.size());
  for (double& v : w) v = rng.uniform();
  ForgetMask mask{s.candidates, w, {}, 5};
  PsiOptions small, big;
  small.tau = 0.001;
  big.tau = 7.5;
  const auto& m = s.est.models[0];
  const double a = alignment_objective(target, model_update_psi(m, UnlearnMethod::first_order, s.train, mask, small));
  const double b = alignment_objective(target, model_update_psi(m, UnlearnMethod::first_order, s.train, mask, big));
  CHECK(std::abs(a - b) <= 1e-10);
  // The basis route gives the same value.
  const Matrix basis = update_basis(s.est, s.train, s.candidates, UnlearnMethod::first_order);
  CHECK(alignment_value_grad(basis, target, w, nullptr) == doctest::Approx(a).epsilon(1e-10));
}

TEST_CASE("single exactly aligned candidate is selected at budget 1") {
  // Two parameters: with one the cosine is only ever +-1 and carries no gradient.
  // Only the second candidate points exactly along the target.
  Matrix basis(3, 2);
  basis(0, 0) = 1.0;
  basis(1, 0) = 0.6;
  basis(1, 1) = 0.8;
  basis(2, 1) = -1.0;
  const std::vector<double> target{0.6, 0.8};
  AscentOptions o;
  o.budget = 1;
  o.restarts = 3;
  o.steps = 50;
  o.seed = 9;
  const auto r = optimize_weights(basis, target, {10, 11, 12}, o);
  // Exhaustive single-point oracle.
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double cs = alignment_objective(target, std::vector<double>{basis(t, 0), basis(t, 1)});
    if (cs > best_cos) {
      best_cos = cs;
      best = t;
    }
  }
  CHECK(best == 1);
  CHECK(r.mask.forget_set() == std::vector<std::size_t>{10 + best});
  CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("label attack on the toy selects the misclassification-aligned point") {
  // Victim at x = 1 is predicted class 0; candidate gradients push the logit gap
  // either way. Forgetting a class-0 point lowers its logit, which is what the
  // untargeted attack wants.
  const Estimator est = make_softmax(ramp_model(1.0));
  const Dataset train = column({1.0, 2.0, 0.5}, {1, 0, 1});
  VictimState vs = one_victim(1.0, VictimMode::under, {0.0});
  AttackConfig cfg;
  cfg.budget = 1;
  cfg.restarts = 2;
  cfg.ascent_steps = 50;
  const std::vector<std::size_t> cand{0, 1, 2};
  const auto r = label_attack_mask(est, train, cand, vs, cfg, LabelAttackKind::untargeted);
  const Matrix basis = update_basis(est, train, cand, UnlearnMethod::first_order);
  const auto target = victim_cross_entropy_grad(est, vs, vs.predicted);
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> one(3, 0.0);
    one[t] = 1.0;
    const double cs = alignment_value_grad(basis, target, one, nullptr);
    if (cs > best_cos) {
      best_cos = cs;
      best = t;
    }
  }
  CHECK(r.mask.forget_set() == std::vector<std::size_t>{cand[best]});
  CHECK(train.labels[cand[best]] == 0);
}

TEST_CASE("optimize_mask: rounding invariants, full budget, determinism") {
  const Scenario s = small_scenario(12);
  AttackConfig cfg = small_cfg();
  const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
  const auto a = optimize_mask(s.est, s.train, s.candidates, vs, cfg);
  a.mask.validate();
  CHECK(a.mask.forget_set().size() == cfg.budget);
  cfg.restarts = 1;
  CHECK(optimize_mask(s.est, s.train, s.candidates, vs, cfg).mask.selected ==
        optimize_mask(s.est, s.train, s.candidates, vs, cfg).mask.selected);
  cfg.budget = s.candidates.size();
  const auto full = optimize_mask(s.est, s.train, s.candidates, vs, cfg);
  for (auto bit : full.mask.selected) CHECK(bit == 1);
  cfg.budget = s.candidates.size() + 1;
  CHECK_THROWS_AS(optimize_mask(s.est, s.train, s.candidates, vs, cfg), ConfigError);
}

TEST_CASE("zero target gives a degenerate flag") {
  Matrix basis(4, 2);
  for (double& v : basis.data) v = 1.0;
  AscentOptions o;
  o.budget = 2;
  const auto r = optimize_weights(basis, std::vector<double>{0.0, 0.0}, {0, 1, 2, 3}, o);
  CHECK(r.degenerate);
  CHECK(r.mask.forget_set().size() == 2);
}

TEST_CASE("random mask: exact size, seeded") {
  std::vector<std::size_t> cand(30);
  std::iota(cand.begin(), cand.end(), std::size_t{100});
  const auto a = random_mask(cand, 7, 42);
  CHECK(a.mask.forget_set().size() == 7);
  CHECK(a.mask.selected == random_mask(cand, 7, 42).mask.selected);
  CHECK(a.mask.selected != random_mask(cand, 7, 43).mask.selected);
  CHECK_THROWS_AS(random_mask(cand, 31, 1), ConfigError);
}

TEST_CASE("transfer: one surrogate, identical surrogates, weight averaging") {
  const Scenario s = small_scenario(13);
  const AttackConfig cfg = small_cfg();
  const VictimState vs = build_victims(s.est, s.victims, s.holdout, s.train, cfg);
  const auto white = optimize_mask(s.est, s.train, s.candidates, vs, cfg);
  const std::vector<Estimator> one{s.est};
  const auto t1 = transfer_attack(one, s.train, s.candidates, s.victims, s.holdout, cfg);
  CHECK(t1.mask.weights == white.mask.weights);
  CHECK(t1.mask.selected == white.mask.selected);
  const std::vector<Estimator> same{s.est, s.est, s.est};
  CHECK(transfer_attack(same, s.train, s.candidates, s.victims, s.holdout, cfg).mask.selected == white.mask.selected);

  // Two different surrogates: the kept weights are the mean of the per-surrogate weights.
  TrainConfig tc;
  tc.epochs = 15;
  tc.seed = 99;
  const Estimator other = make_softmax(train({3, 8, 3}, 0.0, 98, s.train, tc));
  const VictimState vo = build_victims(other, s.victims, s.holdout, s.train, cfg);
  const auto wo = optimize_mask(other, s.train, s.candidates, vo, cfg);
  const std::vector<Estimator> two{s.est, other};
  const auto t2 = transfer_attack(two, s.train, s.candidates, s.victims, s.holdout, cfg);
  std::vector<double> avg(s.candidates.size());
  for (std::size_t t = 0; t < avg.size(); ++t) avg[t] = 0.5 * white.mask.weights[t] + 0.5 * wo.mask.weights[t];
  for (std::size_t t = 0; t < avg.size(); ++t) CHECK(t2.mask.weights[t] == doctest::Approx(avg[t]).epsilon(1e-15));
  CHECK(t2.mask.selected == round_mask(s.candidates, avg, cfg.budget).selected);
}

TEST_CASE("mask file round trip") {
  const ForgetMask m = round_mask({4, 9, 2}, {0.25, 0.75, 0.1}, 1);
  const auto path = std::filesystem::temp_directory_path() / "uu_test_mask.txt";
  write_mask(path, m);
  const ForgetMask back = read_mask(path);
  CHECK(back.candidates == m.candidates);
  CHECK(back.weights == m.weights);
  CHECK(back.selected == m.selected);
  CHECK(back.budget == 1);
  std::filesystem::remove(path);
}
