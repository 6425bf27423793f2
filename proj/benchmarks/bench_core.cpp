#include <benchmark/benchmark.h>

#include <numeric>

#include "uu/attack.hpp"
#include "uu/dataset.hpp"
#include "uu/estimator.hpp"
#include "uu/mask.hpp"
#include "uu/metrics.hpp"
#include "uu/model.hpp"
#include "uu/rng.hpp"

namespace {

// Reference-sized network: d=16, two hidden layers of 32, 10 classes.
const std::vector<std::size_t> kArch{16, 32, 32, 10};

const uu::Dataset& blobs() {
  static const uu::Dataset d = uu::gen_blobs(512, 16, 10, 5.0, 1);
  return d;
}

void BM_Forward(benchmark::State& st) {
  const auto m = uu::init_model(kArch, 0.0, 2);
  const auto& d = blobs();
  std::size_t i = 0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(uu::forward(m, d.row(i++ % d.size())));
  }
}
BENCHMARK(BM_Forward);

void BM_GradParams(benchmark::State& st) {
  const auto m = uu::init_model(kArch, 0.0, 3);
  std::vector<std::size_t> rows(static_cast<std::size_t>(st.range(0)));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (auto _ : st) {
    benchmark::DoNotOptimize(uu::grad_params(m, blobs(), rows));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_GradParams)->Arg(32)->Arg(512);

void BM_Hvp(benchmark::State& st) {
  const auto m = uu::init_model(kArch, 0.0, 4);
  uu::Rng rng(5);
  std::vector<double> v(m.params.size());
  for (double& x : v) x = rng.normal();
  for (auto _ : st) {
    benchmark::DoNotOptimize(uu::hvp(m, blobs(), v));
  }
}
BENCHMARK(BM_Hvp);

void BM_Ece(benchmark::State& st) {
  uu::Rng rng(6);
  const auto n = static_cast<std::size_t>(st.range(0));
  std::vector<uu::ProbVector> p;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(10);
    double s = 0.0;
    for (double& x : z) s += (x = rng.uniform());
    for (double& x : z) x /= s;
    p.emplace_back(z);
    y.push_back(static_cast<int>(rng.below(10)));
  }
  for (auto _ : st) {
    benchmark::DoNotOptimize(uu::ece(p, y));
    benchmark::DoNotOptimize(uu::ace(p, y));
  }
}
BENCHMARK(BM_Ece)->Arg(1000)->Arg(100000);

void BM_AlignmentGrad(benchmark::State& st) {
  const auto candidates = static_cast<std::size_t>(st.range(0));
  const auto m = uu::init_model(kArch, 0.0, 7);
  uu::Rng rng(8);
  uu::Matrix basis(candidates, m.params.size());
  for (double& x : basis.data) x = rng.normal();
  std::vector<double> target(m.params.size()), w(candidates), g;
  for (double& x : target) x = rng.normal();
  for (double& x : w) x = rng.uniform();
  for (auto _ : st) {
    benchmark::DoNotOptimize(uu::alignment_value_grad(basis, target, w, &g));
  }
}
BENCHMARK(BM_AlignmentGrad)->Arg(200)->Arg(800);

}  // namespace

BENCHMARK_MAIN();
