#include "uu/conformal.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "uu/errors.hpp"

namespace uu {

ConformalKind parse_conformal_kind(std::string_view tag) {
  if (tag == "hps") return ConformalKind::hps;
  if (tag == "aps") return ConformalKind::aps;
  if (tag == "raps") return ConformalKind::raps;
  throw ConfigError("unknown conformal kind '" + std::string(tag) + "'");
}

std::string_view to_string(ConformalKind kind) {
  switch (kind) {
    case ConformalKind::hps: return "hps";
    case ConformalKind::aps: return "aps";
    case ConformalKind::raps: return "raps";
  }
  return "?";
}

namespace {

std::vector<std::size_t> descending_order(const ProbVector& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return order;
}

// Scores of every label at once, sharing one sort.
std::vector<double> all_scores(ConformalKind kind, const ProbVector& p, int k_reg,
                               double lambda_reg) {
  std::vector<double> out(p.size());
  if (kind == ConformalKind::hps) {
    for (std::size_t c = 0; c < p.size(); ++c) out[c] = 1.0 - p[c];
    return out;
  }
  const auto order = descending_order(p);
  double cum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    cum += p[order[r]];
    double s = cum;
    if (kind == ConformalKind::raps) {
      const double rank = static_cast<double>(r + 1);
      s += lambda_reg * std::max(0.0, rank - static_cast<double>(k_reg));
    }
    out[order[r]] = s;
  }
  return out;
}

}  // namespace

double nonconformity_score(ConformalKind kind, const ProbVector& p, std::size_t label,
                           int k_reg, double lambda_reg) {
  if (label >= p.size()) throw IndexError("nonconformity_score: label out of range");
  return all_scores(kind, p, k_reg, lambda_reg)[label];
}

double conformal_calibrate(std::span<const double> scores, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const std::size_t n = scores.size();
  const double raw = static_cast<double>(n + 1) * (1.0 - alpha);
  // Guard against 10 * 0.9 = 9.000000000000002 style rounding.
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  if (n == 0 || k > n) {
    throw CalibrationSizeError("conformal calibration needs rank " + std::to_string(k) +
                               " but only " + std::to_string(n) + " scores");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[std::max<std::size_t>(k, 1) - 1];
}

ConformalPredictor fit_conformal(ConformalKind kind, std::span<const ProbVector> probs,
                                 std::span<const int> labels, double alpha, int k_reg,
                                 double lambda_reg) {
  if (probs.size() != labels.size()) throw ShapeError("fit_conformal: length mismatch");
  if (k_reg < 0) throw ConfigError("k_reg must be >= 0");
  std::vector<double> scores;
  scores.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    scores.push_back(nonconformity_score(kind, probs[i], static_cast<std::size_t>(labels[i]),
                                         k_reg, lambda_reg));
  }
  ConformalPredictor cp;
  cp.kind = kind;
  cp.alpha = alpha;
  cp.k_reg = k_reg;
  cp.lambda_reg = lambda_reg;
  cp.qhat = conformal_calibrate(scores, alpha);
  return cp;
}

std::vector<std::size_t> predict_set(const ConformalPredictor& cp, const ProbVector& p) {
  const auto scores = all_scores(cp.kind, p, cp.k_reg, cp.lambda_reg);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] <= cp.qhat) out.push_back(c);
  }
  return out;
}

}  // namespace uu
