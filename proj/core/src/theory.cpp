#include "uu/theory.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

double reflected_sigmoid(double t) { return 1.0 - 1.0 / (1.0 + std::exp(-t)); }

void TheoryConfig::validate() const {
  if (d < 1) throw ConfigError("theory.d must be >= 1");
  if (trials < 1) throw ConfigError("theory.trials must be >= 1");
  if (kappas.empty() || p_grid.empty()) throw ConfigError("theory needs kappas and p_grid");
  for (double k : kappas) {
    if (!(k > 0.0)) throw ConfigError("every kappa must be > 0");
    if (std::llround(static_cast<double>(d) / k) < static_cast<long long>(d)) {
      throw ConfigError("kappa too large: n = d / kappa must be >= d");
    }
  }
  for (double p : p_grid) {
    if (!(p > 0.5 && p < 1.0)) throw ConfigError("p_grid values must lie in (0.5, 1)");
  }
  if (!(bin_halfwidth > 0.0)) throw ConfigError("bin_halfwidth must be > 0");
  if (test_size < 1) throw ConfigError("test_size must be >= 1");
}

namespace {

// Solves A x = b for symmetric positive-definite A (Cholesky, in place).
std::vector<double> cholesky_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double s = a(j, j);
    for (std::size_t k = 0; k < j; ++k) s -= a(j, k) * a(j, k);
    if (!(s > 0.0)) throw DegenerateDataError("Hessian not positive definite (separable data?)");
    a(j, j) = std::sqrt(s);
    for (std::size_t i = j + 1; i < n; ++i) {
      double t = a(i, j);
      for (std::size_t k = 0; k < j; ++k) t -= a(i, k) * a(j, k);
      a(i, j) = t / a(j, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= a(i, k) * b[k];
    b[i] /= a(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= a(k, i) * b[k];
    b[i] /= a(i, i);
  }
  return b;
}

}  // namespace

std::vector<double> fit_reflected_logistic(const Matrix& x, std::span<const int> y,
                                           double grad_tol, int max_iters) {
  // With s = -theta.x the model is the ordinary logistic in s, so the
  // negative log-likelihood is convex in theta.
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  std::vector<double> theta(d, 0.0);
  for (int it = 0; it < max_iters; ++it) {
    std::vector<double> grad(d, 0.0);
    Matrix hess(d, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      const double p = reflected_sigmoid(dot(theta, xi));
      // dp/dt = -p(1 - p): NLL gradient (y - p) x, Hessian p(1 - p) x x^T.
      const double r = static_cast<double>(y[i]) - p;
      const double w = p * (1.0 - p);
      for (std::size_t a = 0; a < d; ++a) {
        grad[a] += r * xi[a];
        const double wa = w * xi[a];
        for (std::size_t b = 0; b <= a; ++b) hess(a, b) += wa * xi[b];
      }
    }
    for (double& g : grad) g /= static_cast<double>(n);
    if (norm2(grad) < grad_tol) return theta;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        hess(a, b) /= static_cast<double>(n);
        hess(b, a) = hess(a, b);
      }
    }
    const auto step = cholesky_solve(hess, grad);
    axpy(-1.0, step, theta);
  }
  return theta;
}

std::vector<CalibrationCell> simulate_calibration(const TheoryConfig& cfg) {
  cfg.validate();
  std::vector<CalibrationCell> table;
  for (std::size_t ki = 0; ki < cfg.kappas.size(); ++ki) {
    const double kappa = cfg.kappas[ki];
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.d) / kappa));
    std::vector<double> delta_sum(cfg.p_grid.size(), 0.0);
    std::vector<int> used(cfg.p_grid.size(), 0);
    std::vector<std::size_t> hits(cfg.p_grid.size(), 0);
    for (int trial = 0; trial < cfg.trials; ++trial) {
      Rng rng(mix_seed(mix_seed(cfg.seed, ki), static_cast<std::uint64_t>(trial)));
      auto draw = [&](std::size_t rows, Matrix& x, std::vector<int>& y) {
        x = Matrix(rows, cfg.d);
        y.resize(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          auto r = x.row(i);
          for (double& v : r) v = rng.normal();
          // theta_star = signal_scale * e_1
          y[i] = rng.uniform() < reflected_sigmoid(cfg.signal_scale * r[0]) ? 1 : 0;
        }
      };
      Matrix xtr, xte;
      std::vector<int> ytr, yte;
      draw(n, xtr, ytr);
      draw(cfg.test_size, xte, yte);
      const auto theta = fit_reflected_logistic(xtr, ytr);

      for (std::size_t pi = 0; pi < cfg.p_grid.size(); ++pi) {
        const double p = cfg.p_grid[pi];
        std::size_t cnt = 0;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < cfg.test_size; ++i) {
          const double ph = reflected_sigmoid(dot(theta, xte.row(i)));
          if (std::abs(ph - p) <= cfg.bin_halfwidth) {
            ++cnt;
            pos += static_cast<std::size_t>(yte[i]);
          }
        }
        if (cnt == 0) continue;
        delta_sum[pi] += p - static_cast<double>(pos) / static_cast<double>(cnt);
        ++used[pi];
        hits[pi] += cnt;
      }
    }
    for (std::size_t pi = 0; pi < cfg.p_grid.size(); ++pi) {
      CalibrationCell c;
      c.kappa = kappa;
      c.p = cfg.p_grid[pi];
      c.n_in_bin = hits[pi];
      c.trials_used = used[pi];
      if (used[pi] > 0) c.delta_cal = delta_sum[pi] / used[pi];
      table.push_back(c);
    }
  }
  return table;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw ZeroVarianceError("correlation of a constant sequence");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman needs two equal-length sequences");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

SlopeFit fit_slope(std::span<const double> kappas, std::span<const double> deltas) {
  if (kappas.size() != deltas.size()) throw ShapeError("fit_slope: length mismatch");
  if (kappas.size() < 3) throw ConfigError("fit_slope needs at least 3 kappa values");
  const double mean = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(deltas.size());
  double ss_tot = 0.0;
  for (double v : deltas) ss_tot += (v - mean) * (v - mean);
  if (ss_tot == 0.0) throw ZeroVarianceError("fit_slope: all deltas are equal");
  SlopeFit f;
  f.slope = dot(kappas, deltas) / dot(kappas, kappas);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    const double e = deltas[i] - f.slope * kappas[i];
    ss_res += e * e;
  }
  f.r2 = 1.0 - ss_res / ss_tot;
  f.spearman = spearman(kappas, deltas);
  return f;
}

SlopeFit fit_slope(std::span<const CalibrationCell> table, double p) {
  std::vector<double> k, d;
  for (const auto& c : table) {
    if (c.p == p && c.delta_cal) {
      k.push_back(c.kappa);
      d.push_back(*c.delta_cal);
    }
  }
  return fit_slope(k, d);
}

void write_theory_csv(std::ostream& out, std::span<const CalibrationCell> table) {
  out << "kappa,p,delta_cal,n_in_bin\n";
  for (const auto& c : table) {
    out << c.kappa << ',' << c.p << ',';
    if (c.delta_cal) out << *c.delta_cal;
    out << ',' << c.n_in_bin << '\n';
  }
}

}  // namespace uu
