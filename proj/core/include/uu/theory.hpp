#pragma once

// Monte-Carlo study of the overconfidence of unregularized logistic-type
// maximum-likelihood fits as the dimension/sample ratio kappa = d/n grows.
//
// Data model: X ~ N(0, I_d), P(Y = 1 | X = x) = sigma(theta_star . x) with
// sigma(t) = 1 - 1 / (1 + e^{-t}) (note: the reflected logistic), and
// theta_star = signal_scale * e_1.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "uu/vec.hpp"

namespace uu {

// 1 - 1 / (1 + e^{-t})
double reflected_sigmoid(double t);

struct TheoryConfig {
  std::size_t d = 40;
  std::vector<double> kappas{0.02, 0.05, 0.1};
  int trials = 200;
  std::vector<double> p_grid{0.7};
  double bin_halfwidth = 0.05;
  std::size_t test_size = 20000;
  double signal_scale = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CalibrationCell {
  double kappa = 0.0;
  double p = 0.0;
  std::optional<double> delta_cal;  // trial mean of p - positive rate in band; empty if no trial hit the band
  std::size_t n_in_bin = 0;         // summed over trials
  int trials_used = 0;
};

// Maximum-likelihood fit of theta for P(Y=1|x) = reflected_sigmoid(theta . x)
// by Newton's method until |gradient| < grad_tol.
std::vector<double> fit_reflected_logistic(const Matrix& x, std::span<const int> y,
                                           double grad_tol = 1e-6, int max_iters = 100);

std::vector<CalibrationCell> simulate_calibration(const TheoryConfig& cfg);

struct SlopeFit {
  double slope = 0.0;     // least squares through the origin
  double spearman = 0.0;  // rank correlation of delta vs kappa
  double r2 = 0.0;        // 1 - SS_res / SS_tot (centered)
};

// Fit over the cells at grid value `p`; needs >= 3 non-missing kappas.
SlopeFit fit_slope(std::span<const CalibrationCell> table, double p);
SlopeFit fit_slope(std::span<const double> kappas, std::span<const double> deltas);

double spearman(std::span<const double> a, std::span<const double> b);

// CSV: kappa,p,delta_cal,n_in_bin (delta empty when missing).
void write_theory_csv(std::ostream& out, std::span<const CalibrationCell> table);

}  // namespace uu
