#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "uu/conformal.hpp"
#include "uu/errors.hpp"
#include "uu/rng.hpp"

using namespace uu;

namespace {

ProbVector pv(std::vector<double> p) { return ProbVector(std::move(p)); }

// Direct score definition: mass of labels ranked at or above `label` in descending order.
double brute_score(ConformalKind kind, const ProbVector& p, std::size_t label, int k, double lam) {
  if (kind == ConformalKind::hps) return 1.0 - p[label];
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  double s = 0.0;
  std::size_t rank = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    s += p[order[r]];
    if (order[r] == label) {
      rank = r + 1;
      break;
    }
  }
  if (kind == ConformalKind::raps) s += lam * std::max(0.0, double(rank) - double(k));
  return s;
}

}  // namespace

TEST_CASE("score hand examples") {
  CHECK(nonconformity_score(ConformalKind::hps, pv({1.0, 0.0}), 0) == 0.0);
  CHECK(nonconformity_score(ConformalKind::aps, pv({0.5, 0.3, 0.2}), 1) == doctest::Approx(0.8));
  CHECK(nonconformity_score(ConformalKind::raps, pv({0.5, 0.3, 0.2}), 2, 1, 0.1) ==
        doctest::Approx(1.2));
  CHECK_THROWS_AS(nonconformity_score(ConformalKind::aps, pv({0.5, 0.5}), 2), IndexError);
}

TEST_CASE("calibrate picks the corrected order statistic") {
  const std::vector<double> s{0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6};
  CHECK(conformal_calibrate(s, 0.1) == 0.9);
  std::vector<double> ten{0.3, 0.1, 0.5, 0.2, 0.9, 0.4, 0.6, 0.7, 0.8, 1.0};
  CHECK(conformal_calibrate(ten, 0.95) == 0.1);
  CHECK_THROWS_AS(conformal_calibrate(std::vector<double>{0.1, 0.2, 0.3}, 0.1), CalibrationSizeError);
  CHECK_THROWS_AS(conformal_calibrate(std::vector<double>{}, 0.5), CalibrationSizeError);
  CHECK_THROWS_AS(conformal_calibrate(ten, 0.0), ConfigError);
}

TEST_CASE("prediction sets: HPS example, full set, monotone in qhat") {
  ConformalPredictor hps{ConformalKind::hps, 0.4};
  CHECK(predict_set(hps, pv({0.7, 0.2, 0.1})) == std::vector<std::size_t>{0});
  ConformalPredictor all{ConformalKind::raps, 1e9};
  CHECK(predict_set(all, pv({0.1, 0.6, 0.3})).size() == 3);

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const ProbVector p = oracle::random_probs(rng, 6);
    for (auto kind : {ConformalKind::hps, ConformalKind::aps, ConformalKind::raps}) {
      std::size_t prev = 0;
      for (double q = 0.0; q <= 2.0; q += 0.05) {
        ConformalPredictor cp{kind, q};
        const auto set = predict_set(cp, p);
        CHECK(set.size() >= prev);
        prev = set.size();
      }
    }
  }
}

TEST_CASE("prediction sets match exhaustive label enumeration") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const ProbVector p = oracle::random_probs(rng, 7, 2.0);
    const double q = rng.uniform() * 1.3;
    for (auto kind : {ConformalKind::hps, ConformalKind::aps, ConformalKind::raps}) {
      ConformalPredictor cp{kind, q, 0.1, 2, 0.1};
      std::vector<std::size_t> want;
      for (std::size_t c = 0; c < p.size(); ++c) {
        CHECK(nonconformity_score(kind, p, c, 2, 0.1) == doctest::Approx(brute_score(kind, p, c, 2, 0.1)));
        if (brute_score(kind, p, c, 2, 0.1) <= q) want.push_back(c);
      }
      CHECK(predict_set(cp, p) == want);
      if (kind != ConformalKind::hps) {
        // Sets are prefixes of the descending order.
        const auto set = predict_set(cp, p);
        double min_in = 2.0, max_out = -1.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
          if (std::find(set.begin(), set.end(), c) != set.end()) min_in = std::min(min_in, p[c]);
          else max_out = std::max(max_out, p[c]);
        }
        if (!set.empty()) CHECK(min_in >= max_out);
      }
    }
  }
}

TEST_CASE("coverage on exchangeable data over 1000 resamples") {
  // Labels drawn from the predicted distribution, so calibration and test are exchangeable.
  Rng rng(5);
  auto sample = [&](std::size_t n, std::vector<ProbVector>* p, std::vector<int>* y) {
    p->clear();
    y->clear();
    for (std::size_t i = 0; i < n; ++i) {
      p->push_back(oracle::random_probs(rng, 5, 2.0));
      double u = rng.uniform(), acc = 0.0;
      int lab = 4;
      for (int c = 0; c < 5; ++c) {
        acc += (*p)[i][c];
        if (u < acc) {
          lab = c;
          break;
        }
      }
      y->push_back(lab);
    }
  };
  for (auto kind : {ConformalKind::hps, ConformalKind::aps, ConformalKind::raps}) {
    double covered = 0.0, total = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<ProbVector> cp, tp;
      std::vector<int> cy, ty;
      sample(100, &cp, &cy);
      sample(20, &tp, &ty);
      const auto pred = fit_conformal(kind, cp, cy, 0.1);
      for (std::size_t i = 0; i < tp.size(); ++i) {
        const auto set = predict_set(pred, tp[i]);
        covered += std::find(set.begin(), set.end(), std::size_t(ty[i])) != set.end();
        total += 1.0;
      }
    }
    CHECK(covered / total >= 0.88);
  }
}
