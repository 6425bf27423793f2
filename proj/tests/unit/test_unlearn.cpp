#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "uu/errors.hpp"
#include "uu/rng.hpp"
#include "uu/sisa.hpp"
#include "uu/train.hpp"
#include "uu/unlearn.hpp"

using namespace uu;

namespace {

Dataset noise_data(std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(n, d);
  ds.class_count = c;
  for (double& v : ds.features.data) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(rng.below(c)));
  return ds;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

// Dense Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
    }
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * x[j];
    x[k] = s / a[k][k];
  }
  return x;
}

}  // namespace

TEST_CASE("first-order unlearning: empty mask, tau = 0, hand-computed toy") {
  // One hidden unit with w = 1, b = 0 passes the positive feature through unchanged,
  // so only the output layer sees a nontrivial softmax gradient.
  ModelParams m;
  m.arch = {1, 1, 2};
  m.params = {1.0, 0.0, 0.3, -0.2, 0.1, 0.05};
  Dataset ds;
  ds.features = Matrix(1, 1);
  ds.features(0, 0) = 2.0;
  ds.labels = {0};
  ds.class_count = 2;
  const ForgetMask none = round_mask({0}, {0.0}, 0);
  CHECK(unlearn_first_order(m, ds, none, 0.5) == m);
  const ForgetMask one = round_mask({0}, {1.0}, 1);
  CHECK(unlearn_first_order(m, ds, one, 0.0) == m);

  const double z0 = 0.3 * 2.0 + 0.1, z1 = -0.2 * 2.0 + 0.05;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1)), p1 = 1.0 - p0;
  const double tau = 0.5;
  // Hidden gradient: dL/dh = (p0 - 1) * 0.3 + p1 * (-0.2), times x for the weight.
  const double dh = (p0 - 1.0) * 0.3 + p1 * -0.2;
  const std::vector<double> want{1.0 + tau * dh * 2.0, tau * dh, 0.3 + tau * (p0 - 1.0) * 2.0,
                                 -0.2 + tau * p1 * 2.0, 0.1 + tau * (p0 - 1.0), 0.05 + tau * p1};
  const ModelParams got = unlearn_first_order(m, ds, one, tau);
  for (std::size_t i = 0; i < 6; ++i) CHECK(got.params[i] == doctest::Approx(want[i]).epsilon(1e-14));
  const ForgetMask soft{{0}, {0.5}, {}, 1};
  CHECK_THROWS_AS(unlearn_first_order(m, ds, soft, tau), ConfigError);
}

TEST_CASE("second-order unlearning matches an explicit Hessian solve") {
  // Assemble H column by column from gradient differences, then solve densely.
  const Dataset ds = noise_data(12, 2, 3, 21);
  const ModelParams m = init_model({2, 3, 3}, 0.0, 22);
  const ForgetMask mask = mask_from_positions(iota_rows(12), std::vector<std::size_t>{1, 4, 7});
  const double damping = 5.0;  // keeps the damped Hessian positive definite here
  const std::vector<std::size_t> keep{0, 2, 3, 5, 6, 8, 9, 10, 11}, forget{1, 4, 7};
  auto summed_grad = [&](const std::vector<double>& theta, const std::vector<std::size_t>& rows) {
    ModelParams q = m;
    q.params = theta;
    auto g = grad_params(q, ds, rows);
    for (double& v : g) v *= static_cast<double>(rows.size());
    return g;
  };
  const std::size_t P = m.params.size();
  const double h = 1e-5;
  std::vector<std::vector<double>> H(P, std::vector<double>(P, 0.0));
  for (std::size_t j = 0; j < P; ++j) {
    auto up = m.params, dn = m.params;
    up[j] += h;
    dn[j] -= h;
    const auto gu = summed_grad(up, keep), gd = summed_grad(dn, keep);
    for (std::size_t i = 0; i < P; ++i) H[i][j] = (gu[i] - gd[i]) / (2 * h);
  }
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < i; ++j) H[i][j] = H[j][i] = 0.5 * (H[i][j] + H[j][i]);
    H[i][i] += damping;
  }
  const auto delta = solve(H, summed_grad(m.params, forget));
  const auto res = unlearn_second_order(m, ds, mask, damping, 200, 1e-12);
  std::vector<double> got(P);
  for (std::size_t k = 0; k < P; ++k) got[k] = res.model.params[k] - m.params[k];
  CHECK(oracle::max_rel_err(got, delta) <= 1e-6);
  CHECK(res.converged);
}

TEST_CASE("second-order unlearning: empty set, huge damping, CG reporting") {
  const Dataset ds = noise_data(20, 3, 2, 23);
  const ModelParams m = init_model({3, 4, 2}, 0.0, 24);
  CHECK(unlearn_second_order(m, ds, round_mask(iota_rows(20), std::vector<double>(20, 0.0), 0), 1e-3, 50, 1e-8)
            .model == m);
  const ForgetMask mask = mask_from_positions(iota_rows(20), std::vector<std::size_t>{0, 3});
  const auto big = unlearn_second_order(m, ds, mask, 1e9, 100, 1e-10);
  double dist = 0.0;
  for (std::size_t k = 0; k < m.params.size(); ++k) dist += std::pow(big.model.params[k] - m.params[k], 2);
  CHECK(std::sqrt(dist) <= 1e-6);
  const auto capped = unlearn_second_order(m, ds, mask, 1e-6, 1, 1e-14);
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 1);
}

TEST_CASE("conjugate gradient solves a small SPD system") {
  const std::vector<std::vector<double>> A{{4, 1, 0}, {1, 3, 1}, {0, 1, 2}};
  const std::vector<double> b{1, 2, 3};
  const LinearOp op = [&](std::span<const double> v) {
    std::vector<double> out(3, 0.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) out[i] += A[i][j] * v[j];
    }
    return out;
  };
  const auto r = conjugate_gradient(op, b, 10, 1e-12);
  const auto want = solve(A, b);
  CHECK(r.converged);
  for (int i = 0; i < 3; ++i) CHECK(r.x[i] == doctest::Approx(want[i]).epsilon(1e-10));
}

TEST_CASE("unrolling: trivial cases and single-step retrain recovery") {
  const Dataset one = noise_data(1, 3, 2, 25);
  const ModelParams init = init_model({3, 4, 2}, 0.0, 26);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.1;
  const ModelParams star = train_from(init, one, cfg);
  const ForgetMask all = mask_from_positions({0}, std::vector<std::size_t>{0});
  const ForgetMask none = round_mask({0}, {0.0}, 0);
  CHECK(unlearn_unrolling(star, init, one, none, 0.1, 1) == star);
  CHECK(unlearn_unrolling(star, init, one, all, 0.0, 1) == star);
  // Retraining without the only sample leaves the initialization.
  const ModelParams back = unlearn_unrolling(star, init, one, all, 0.1, 1);
  for (std::size_t k = 0; k < init.params.size(); ++k) {
    CHECK(back.params[k] == doctest::Approx(init.params[k]).epsilon(1e-13));
  }
}

TEST_CASE("Fisher diagonal equals mean squared per-sample gradients") {
  const Dataset ds = noise_data(6, 3, 2, 27);
  const ModelParams m = init_model({3, 4, 2}, 0.0, 28);
  const auto rows = iota_rows(6);
  const auto f = fisher_diagonal(m, ds, rows);
  std::vector<double> want(m.params.size(), 0.0);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto g = oracle::fd_gradient(
        [&](const std::vector<double>& p) {
          ModelParams q = m;
          q.params = p;
          return oracle::ce(q, {ds.features(i, 0), ds.features(i, 1), ds.features(i, 2)}, ds.labels[i]);
        },
        m.params);
    for (std::size_t k = 0; k < g.size(); ++k) want[k] += g[k] * g[k] / 6.0;
  }
  CHECK(oracle::max_rel_err(f, want) <= 1e-6);
}

TEST_CASE("Fisher forgetting: zero noise, determinism, per-coordinate variance") {
  const Dataset ds = noise_data(10, 2, 2, 29);
  const ModelParams m = init_model({2, 3, 2}, 0.0, 30);
  const ForgetMask mask = mask_from_positions(iota_rows(10), std::vector<std::size_t>{0});
  CHECK(unlearn_fisher(m, ds, mask, 0.0, 1e-3, 1) == m);
  CHECK(unlearn_fisher(m, ds, mask, 0.1, 1e-3, 5) == unlearn_fisher(m, ds, mask, 0.1, 1e-3, 5));

  std::vector<std::size_t> keep;
  for (std::size_t i = 1; i < 10; ++i) keep.push_back(i);
  const auto f = fisher_diagonal(m, ds, keep);
  const double noise = 0.1, damping = 1e-2;
  const int draws = 10000;
  std::vector<double> sum(m.params.size(), 0.0), sq(m.params.size(), 0.0);
  for (int s = 0; s < draws; ++s) {
    const auto u = unlearn_fisher(m, ds, mask, noise, damping, mix_seed(77, s));
    for (std::size_t k = 0; k < sum.size(); ++k) {
      const double e = u.params[k] - m.params[k];
      sum[k] += e;
      sq[k] += e * e;
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double mean = sum[k] / draws;
    const double var = sq[k] / draws - mean * mean;
    CHECK(var == doctest::Approx(noise * noise / (f[k] + damping)).epsilon(0.05));
  }
}

TEST_CASE("SSD dampening hand cases") {
  const std::vector<double> p{2.0, 3.0, 4.0};
  const std::vector<double> ff{1.0, 4.0, 0.5};
  const std::vector<double> fd{1.0, 1.0, 1.0};
  CHECK(ssd_dampen(p, ff, fd, 0.5, 1.0) == std::vector<double>{2.0, 0.75, 4.0});
  CHECK(ssd_dampen(p, ff, fd, 0.5, 2.0) == std::vector<double>{2.0, 1.5, 4.0});
  CHECK(ssd_dampen(p, ff, fd, std::numeric_limits<double>::infinity(), 1.0) == p);

  const Dataset ds = noise_data(10, 2, 2, 31);
  const ModelParams m = init_model({2, 3, 2}, 0.0, 32);
  const ForgetMask mask = mask_from_positions(iota_rows(10), std::vector<std::size_t>{2, 5});
  CHECK(unlearn_ssd(m, ds, mask, std::numeric_limits<double>::infinity(), 1.0) == m);
  const auto u = unlearn_ssd(m, ds, mask, 1.0, 1.0);
  CHECK(u.params.size() == m.params.size());
  for (std::size_t k = 0; k < m.params.size(); ++k) CHECK(std::abs(u.params[k]) <= std::abs(m.params[k]));
}

TEST_CASE("SISA: unlearning equals retraining the affected shard from scratch") {
  const Dataset ds = noise_data(90, 3, 3, 33);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 34;
  const std::vector<std::size_t> arch{3, 6, 3};
  const ShardedModel sm = sisa_train(ds, 3, 2, arch, 0.0, 35, cfg, 36);

  const ShardedModel same = sisa_unlearn(sm, ds, {});
  CHECK(same.checkpoints == sm.checkpoints);

  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t row = rng.below(ds.size());
    const std::size_t shard = sm.shard_of[row];
    const ShardedModel after = sisa_unlearn(sm, ds, std::vector<std::size_t>{row});

    // Independent retrain of the shard without `row`.
    ModelParams cur = init_model(arch, 0.0, mix_seed(35, shard));
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (i != row && sm.shard_of[i] == shard && sm.slice_of[i] == r) rows.push_back(i);
      }
      TrainConfig c = cfg;
      c.seed = mix_seed(cfg.seed, shard * 2 + r);
      cur = train_from(std::move(cur), ds, rows, c);
    }
    CHECK(after.shard_model(shard) == cur);
    for (std::size_t s = 0; s < 3; ++s) {
      if (s != shard) CHECK(after.checkpoints[s] == sm.checkpoints[s]);
    }
    CHECK_THROWS_AS(sisa_unlearn(after, ds, std::vector<std::size_t>{row}), IndexError);
  }
  const ProbVector p = sisa_predict(sm, ds.row(0));
  p.validate(1e-12);
  CHECK_THROWS_AS(sisa_train(ds, 50, 2, arch, 0.0, 1, cfg, 1), ConfigError);
}

TEST_CASE("psi: zero weights, one-hot, linearity, non-differentiable tags") {
  const Dataset ds = noise_data(8, 3, 2, 38);
  const ModelParams m = init_model({3, 4, 2}, 0.0, 39);
  ForgetMask w{iota_rows(8), std::vector<double>(8, 0.0), {}, 2};
  PsiOptions opts;
  opts.tau = 0.3;
  for (double v : model_update_psi(m, UnlearnMethod::first_order, ds, w, opts)) CHECK(v == 0.0);

  w.weights[5] = 1.0;
  const auto one = model_update_psi(m, UnlearnMethod::first_order, ds, w, opts);
  const auto g = sample_gradient(m, ds.row(5), ds.labels[5]);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(one[k] == doctest::Approx(0.3 * g[k]).epsilon(1e-14));

  Rng rng(40);
  ForgetMask a = w, b = w, ab = w;
  for (std::size_t t = 0; t < 8; ++t) {
    a.weights[t] = 0.5 * rng.uniform();
    b.weights[t] = 0.5 * rng.uniform();
    ab.weights[t] = a.weights[t] + b.weights[t];
  }
  const auto pa = model_update_psi(m, UnlearnMethod::first_order, ds, a, opts);
  const auto pb = model_update_psi(m, UnlearnMethod::first_order, ds, b, opts);
  const auto pab = model_update_psi(m, UnlearnMethod::first_order, ds, ab, opts);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(std::abs(pab[k] - pa[k] - pb[k]) <= 1e-10);

  for (auto method : {UnlearnMethod::unrolling, UnlearnMethod::fisher, UnlearnMethod::ssd, UnlearnMethod::sisa}) {
    CHECK_THROWS_AS(model_update_psi(m, method, ds, w, opts), ConfigError);
  }
  CHECK(model_update_psi(m, UnlearnMethod::second_order, ds, w, opts).size() == m.params.size());
}

TEST_CASE("every method leaves an empty forget set untouched") {
  const Dataset ds = noise_data(10, 2, 2, 41);
  const ModelParams m = init_model({2, 3, 2}, 0.0, 42);
  const ForgetMask none = round_mask(iota_rows(10), std::vector<double>(10, 0.0), 0);
  CHECK(unlearn_first_order(m, ds, none, 1.0) == m);
  CHECK(unlearn_second_order(m, ds, none, 1e-3, 10, 1e-8).model == m);
  CHECK(unlearn_unrolling(m, m, ds, none, 0.1, 5) == m);
  CHECK(unlearn_fisher(m, ds, none, 0.1, 1e-3, 1) == m);
  CHECK(unlearn_ssd(m, ds, none, 1.0, 1.0) == m);
}
