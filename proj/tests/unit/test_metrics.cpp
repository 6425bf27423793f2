#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "uu/errors.hpp"
#include "uu/metrics.hpp"
#include "uu/rng.hpp"

using namespace uu;

namespace {

ProbVector pv(std::vector<double> p) { return ProbVector(std::move(p)); }

// Calibrated generator: labels are drawn from the reported distribution.
void calibrated(std::size_t n, std::uint64_t seed, std::vector<ProbVector>* p, std::vector<int>* y) {
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    p->push_back(oracle::random_probs(rng, 4, 2.0));
    double u = rng.uniform(), acc = 0.0;
    int lab = 3;
    for (int c = 0; c < 4; ++c) {
      acc += p->back()[c];
      if (u < acc) {
        lab = c;
        break;
      }
    }
    y->push_back(lab);
  }
}

}  // namespace

TEST_CASE("four-sample fixture gives 0.4 for ECE and ACE") {
  // Confidences .9 .9 .6 .6 with correctness 1 0 1 1, C = 2.
  const std::vector<ProbVector> p{pv({0.9, 0.1}), pv({0.9, 0.1}), pv({0.6, 0.4}), pv({0.6, 0.4})};
  const std::vector<int> y{0, 1, 0, 0};
  CHECK(ece(p, y, 2) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(ace(p, y, 2) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("perfect and degenerate predictions") {
  const std::vector<ProbVector> one{pv({1, 0, 0}), pv({0, 1, 0}), pv({0, 0, 1})};
  const std::vector<int> y{0, 1, 2};
  CHECK(ece(one, y) == 0.0);
  CHECK(ace(one, y, 3) == 0.0);
  CHECK(brier(one, y) == 0.0);
  // Identical confidences: one effective bin.
  const std::vector<ProbVector> same(4, pv({0.7, 0.3}));
  const std::vector<int> ys{0, 0, 1, 1};
  CHECK(ace(same, ys, 2) == doctest::Approx(0.2));
  const std::vector<ProbVector> empty;
  const std::vector<int> none;
  CHECK_THROWS_AS(ece(empty, none), EmptyInputError);
  CHECK_THROWS_AS(ace(empty, none), EmptyInputError);
  CHECK_THROWS_AS(brier(empty, none), EmptyInputError);
}

TEST_CASE("calibrated generator has small ECE and ACE") {
  std::vector<ProbVector> p;
  std::vector<int> y;
  calibrated(100000, 7, &p, &y);
  CHECK(ece(p, y) <= 0.02);
  CHECK(ace(p, y) <= 0.02);
}

TEST_CASE("ECE and ACE agree with independent binning oracles") {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 20 + rng.below(200);
    const std::size_t c = 2 + rng.below(6);
    const int bins = 1 + static_cast<int>(rng.below(20));
    std::vector<ProbVector> p;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(oracle::random_probs(rng, c, 1.0 + 4.0 * rng.uniform()));
      y.push_back(static_cast<int>(rng.below(c)));
    }
    // Force some ties.
    for (std::size_t i = 0; i + 1 < n; i += 7) p[i + 1] = p[i];
    CHECK(std::abs(ece(p, y, bins) - oracle::ece(p, y, bins)) <= 1e-12);
    if (n >= static_cast<std::size_t>(bins)) {
      CHECK(std::abs(ace(p, y, bins) - oracle::ace(p, y, bins)) <= 1e-12);
    }
    CHECK(std::abs(brier(p, y) - oracle::brier(p, y)) <= 1e-12);
  }
}

TEST_CASE("a single bin makes ECE and ACE coincide") {
  Rng rng(9);
  std::vector<ProbVector> p;
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) {
    p.push_back(oracle::random_probs(rng, 3));
    y.push_back(static_cast<int>(rng.below(3)));
  }
  CHECK(ece(p, y, 1) == doctest::Approx(ace(p, y, 1)).epsilon(1e-12));
}

TEST_CASE("metrics are invariant to permuting samples") {
  Rng rng(10);
  std::vector<ProbVector> p;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    p.push_back(oracle::random_probs(rng, 4));
    y.push_back(static_cast<int>(rng.below(4)));
  }
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  std::vector<ProbVector> q;
  std::vector<int> z;
  for (auto i : idx) {
    q.push_back(p[i]);
    z.push_back(y[i]);
  }
  CHECK(ece(q, z) == doctest::Approx(ece(p, y)).epsilon(1e-12));
  CHECK(brier(q, z) == doctest::Approx(brier(p, y)).epsilon(1e-12));
  // ACE breaks ties by sample order, but these confidences are distinct.
  CHECK(ace(q, z) == doctest::Approx(ace(p, y)).epsilon(1e-12));
}

TEST_CASE("brier arithmetic") {
  CHECK(brier(std::vector<ProbVector>{pv({0.7, 0.3})}, std::vector<int>{0}) == doctest::Approx(0.18));
  CHECK(brier(std::vector<ProbVector>{pv({0.5, 0.5})}, std::vector<int>{1}) == doctest::Approx(0.5));
}

TEST_CASE("label preservation") {
  const std::vector<int> a{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> b = a;
  CHECK(label_preservation(a, b) == 1.0);
  b[3] = 0;
  CHECK(label_preservation(a, b) == doctest::Approx(0.9));
  std::vector<int> c(10);
  for (int i = 0; i < 10; ++i) c[i] = a[i] + 1;
  CHECK(label_preservation(a, c) == 0.0);
}

TEST_CASE("reliability bins tile the confidence range") {
  Rng rng(11);
  std::vector<ProbVector> p;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    p.push_back(oracle::random_probs(rng, 5));
    y.push_back(static_cast<int>(rng.below(5)));
  }
  const auto bins = reliability_bins(p, y, 10);
  CHECK(bins.size() == 10);
  CHECK(bins.front().lower == doctest::Approx(0.2));
  CHECK(bins.back().upper == doctest::Approx(1.0));
  std::size_t total = 0;
  double weighted = 0.0;
  for (const auto& b : bins) {
    total += b.count;
    weighted += b.count * std::abs(b.accuracy - b.confidence);
  }
  CHECK(total == 200);
  CHECK(weighted / 200.0 == doctest::Approx(ece(p, y, 10)).epsilon(1e-12));
}
