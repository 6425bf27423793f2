#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "uu/estimator.hpp"

namespace uu {

enum class ConformalKind { hps, aps, raps };
ConformalKind parse_conformal_kind(std::string_view tag);
std::string_view to_string(ConformalKind kind);

struct ConformalPredictor {
  ConformalKind kind = ConformalKind::aps;
  double qhat = 0.0;
  double alpha = 0.1;
  int k_reg = 2;
  double lambda_reg = 0.1;
};

// hps: 1 - p[label]
// aps: cumulative mass of the descending-sorted probabilities up to and
//      including `label` (ties ordered by class index, no randomization)
// raps: aps + lambda_reg * max(0, rank(label) - k_reg), rank 1-based
double nonconformity_score(ConformalKind kind, const ProbVector& p, std::size_t label,
                           int k_reg = 2, double lambda_reg = 0.1);

// The ceil((n + 1)(1 - alpha))-th smallest score. Throws CalibrationSizeError
// when that rank exceeds n.
double conformal_calibrate(std::span<const double> scores, double alpha);

ConformalPredictor fit_conformal(ConformalKind kind, std::span<const ProbVector> probs,
                                 std::span<const int> labels, double alpha, int k_reg = 2,
                                 double lambda_reg = 0.1);

// Labels c with score(c) <= qhat, ascending by class index.
std::vector<std::size_t> predict_set(const ConformalPredictor& cp, const ProbVector& p);

}  // namespace uu
