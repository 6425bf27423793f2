#include "uu/attack.hpp"

#include <cmath>
#include <numeric>

#include "uu/errors.hpp"

namespace uu {

namespace {
constexpr double kProbFloor = 1e-12;
}

AttackMode parse_attack_mode(std::string_view tag) {
  if (tag == "under") return AttackMode::under;
  if (tag == "over") return AttackMode::over;
  if (tag == "ov_un") return AttackMode::ov_un;
  throw ConfigError("unknown attack mode '" + std::string(tag) + "'");
}

std::string_view to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::under: return "under";
    case AttackMode::over: return "over";
    case AttackMode::ov_un: return "ov_un";
  }
  return "?";
}

void AttackConfig::validate(std::size_t candidate_count) const {
  if (lambda < 0.0) throw ConfigError("attack.lambda must be >= 0");
  if (k_neighbors < 1) throw ConfigError("attack.k_neighbors must be >= 1");
  if (!(xi_percentile >= 0.0 && xi_percentile < 100.0)) throw ConfigError("attack.xi_percentile must lie in [0, 100)");
  if (!(margin_target > 0.0 && margin_target <= 1.0)) throw ConfigError("attack.margin_target must lie in (0, 1]");
  if (budget > candidate_count) throw ConfigError("attack.budget exceeds the number of candidates");
  if (restarts < 1) throw ConfigError("attack.restarts must be >= 1");
  if (ascent_steps < 0) throw ConfigError("attack.ascent_steps must be >= 0");
}

Matrix hidden_matrix(const ModelParams& model, const Dataset& data) {
  const std::size_t width = model.arch[model.arch.size() - 2];
  Matrix h(data.size(), width);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto r = hidden_rep(model, data.row(i));
    std::copy(r.begin(), r.end(), h.row(i).begin());
  }
  return h;
}

std::vector<std::size_t> nearest_neighbors(std::span<const double> h, const Matrix& pool, int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (pool.rows < static_cast<std::size_t>(k)) throw ConfigError("pool smaller than K");
  std::vector<std::pair<double, std::size_t>> d(pool.rows);
  for (std::size_t i = 0; i < pool.rows; ++i) {
    auto r = pool.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += (r[j] - h[j]) * (r[j] - h[j]);
    d[i] = {s, i};
  }
  const auto kk = static_cast<std::size_t>(k);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  std::vector<std::size_t> out(kk);
  for (std::size_t i = 0; i < kk; ++i) out[i] = d[i].second;
  return out;
}

double proximity_hidden(std::span<const double> h, const Matrix& pool_hidden, int k) {
  const auto nn = nearest_neighbors(h, pool_hidden, k);
  double s = 0.0;
  for (std::size_t i : nn) {
    auto r = pool_hidden.row(i);
    double d2 = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) d2 += (r[j] - h[j]) * (r[j] - h[j]);
    s += std::sqrt(d2);
  }
  return std::exp(-s / static_cast<double>(k));
}

double proximity(const ModelParams& model, std::span<const double> x, const Dataset& pool, int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  return proximity_hidden(hidden_rep(model, x), hidden_matrix(model, pool), k);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyInputError("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<std::size_t> reference_set(std::span<const double> prox, std::span<const int> predicted,
                                       int label, double xi, VictimMode mode, bool* fell_back) {
  if (fell_back) *fell_back = false;
  std::vector<std::size_t> same;
  std::vector<double> vals;
  for (std::size_t i = 0; i < prox.size(); ++i) {
    if (predicted[i] == label) {
      same.push_back(i);
      vals.push_back(prox[i]);
    }
  }
  if (same.empty()) throw DegenerateDataError("no holdout sample shares class " + std::to_string(label));
  std::vector<std::size_t> out;
  if (mode == VictimMode::under) {
    const double cut = percentile(vals, xi);
    for (std::size_t i : same) {
      if (prox[i] >= cut) out.push_back(i);
    }
  } else {
    const double cut = percentile(vals, 100.0 - xi);
    for (std::size_t i : same) {
      if (prox[i] <= cut) out.push_back(i);
    }
  }
  if (out.empty()) {
    if (fell_back) *fell_back = true;
    std::size_t best = same.front();
    for (std::size_t i : same) {
      const bool better = mode == VictimMode::under ? prox[i] > prox[best] : prox[i] < prox[best];
      if (better) best = i;
    }
    out.push_back(best);
  }
  return out;
}

VictimState build_victims(const Estimator& est, const Dataset& victims, const Dataset& holdout,
                          const Dataset& pool, const AttackConfig& cfg) {
  est.validate();
  VictimState vs;
  vs.features = victims.features;
  vs.true_labels = victims.labels;
  vs.holdout = holdout;
  for (std::size_t v = 0; v < victims.size(); ++v) {
    const int yhat = static_cast<int>(estimate(est, victims.row(v)).top_label());
    vs.predicted.push_back(yhat);
    VictimMode m = VictimMode::under;
    if (cfg.mode == AttackMode::over) m = VictimMode::over;
    if (cfg.mode == AttackMode::ov_un && yhat != victims.labels[v]) m = VictimMode::over;
    vs.modes.push_back(m);
  }

  const ModelParams& model = est.models.front();
  const Matrix pool_h = hidden_matrix(model, pool);
  std::vector<double> prox(holdout.size());
  std::vector<int> hold_pred(holdout.size());
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    prox[i] = proximity_hidden(hidden_rep(model, holdout.row(i)), pool_h, cfg.k_neighbors);
    hold_pred[i] = static_cast<int>(estimate(est, holdout.row(i)).top_label());
  }
  for (std::size_t v = 0; v < vs.size(); ++v) {
    bool fell_back = false;
    vs.reference.push_back(reference_set(prox, hold_pred, vs.predicted[v], cfg.xi_percentile,
                                         vs.modes[v], &fell_back));
    if (fell_back) {
      vs.warnings.push_back("victim " + std::to_string(v) +
                            ": empty proximity reference set, using best-ranked sample");
    }
  }
  return vs;
}

namespace {

struct MarginTerm {
  double value = 0.0;
  std::size_t runner_up = 0;
};

MarginTerm margin_of(const ProbVector& p, int yhat) {
  MarginTerm m;
  double best = -1.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (static_cast<int>(c) == yhat) continue;
    if (p[c] > best) {
      best = p[c];
      m.runner_up = c;
    }
  }
  m.value = p[static_cast<std::size_t>(yhat)] - best;
  return m;
}

// Hinge value of one victim and, optionally, its gradient w.r.t. probabilities.
double hinge(const ProbVector& p, int yhat, VictimMode mode, double margin_target,
             std::vector<double>* dp) {
  const auto m = margin_of(p, yhat);
  const double h = mode == VictimMode::under ? m.value : margin_target - m.value;
  if (h <= 0.0) return 0.0;
  if (dp) {
    dp->assign(p.size(), 0.0);
    const double sgn = mode == VictimMode::under ? 1.0 : -1.0;
    (*dp)[static_cast<std::size_t>(yhat)] = sgn;
    (*dp)[m.runner_up] = -sgn;
  }
  return h;
}

std::vector<double> reference_mean(const Estimator& est, const VictimState& vs, std::size_t v) {
  const auto& ref = vs.reference[v];
  if (ref.empty()) throw DegenerateDataError("empty reference set");
  std::vector<double> q(vs.holdout.class_count, 0.0);
  const double w = 1.0 / static_cast<double>(ref.size());
  for (std::size_t i : ref) axpy(w, estimate(est, vs.holdout.row(i)).values(), q);
  return q;
}

double kl_floor(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    s += p[c] * (std::log(std::max(p[c], kProbFloor)) - std::log(std::max(q[c], kProbFloor)));
  }
  return s;
}

}  // namespace

double attack_loss(const Estimator& est, const VictimState& vs, double margin_target) {
  double s = 0.0;
  for (std::size_t v = 0; v < vs.size(); ++v) {
    s += hinge(estimate(est, vs.features.row(v)), vs.predicted[v], vs.modes[v], margin_target, nullptr);
  }
  return s;
}

std::vector<double> attack_loss_grad(const Estimator& est, const VictimState& vs,
                                     double margin_target) {
  std::vector<double> g(est.param_count(), 0.0);
  std::vector<double> dp;
  for (std::size_t v = 0; v < vs.size(); ++v) {
    auto x = vs.features.row(v);
    if (hinge(estimate(est, x), vs.predicted[v], vs.modes[v], margin_target, &dp) > 0.0) {
      estimate_vjp(est, x, dp, g);
    }
  }
  return g;
}

double regularizer_kl(const Estimator& est, const VictimState& vs) {
  double s = 0.0;
  for (std::size_t v = 0; v < vs.size(); ++v) {
    s += kl_floor(estimate(est, vs.features.row(v)).values(), reference_mean(est, vs, v));
  }
  return s;
}

std::vector<double> regularizer_grad(const Estimator& est, const VictimState& vs) {
  std::vector<double> g(est.param_count(), 0.0);
  for (std::size_t v = 0; v < vs.size(); ++v) {
    auto x = vs.features.row(v);
    const auto p = estimate(est, x);
    const auto q = reference_mean(est, vs, v);
    std::vector<double> dp(p.size()), dq(p.size());
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double pf = std::max(p[c], kProbFloor);
      const double qf = std::max(q[c], kProbFloor);
      dp[c] = std::log(pf) - std::log(qf) + (p[c] >= kProbFloor ? 1.0 : 0.0);
      dq[c] = q[c] >= kProbFloor ? -p[c] / q[c] : 0.0;
    }
    estimate_vjp(est, x, dp, g);
    const double w = 1.0 / static_cast<double>(vs.reference[v].size());
    for (std::size_t i : vs.reference[v]) estimate_vjp(est, vs.holdout.row(i), dq, g, w);
  }
  return g;
}

double total_attack_loss(const Estimator& est, const VictimState& vs, const AttackConfig& cfg) {
  double l = attack_loss(est, vs, cfg.margin_target);
  if (cfg.lambda != 0.0) l += cfg.lambda * regularizer_kl(est, vs);
  return l;
}

std::vector<double> total_attack_grad(const Estimator& est, const VictimState& vs,
                                      const AttackConfig& cfg) {
  auto g = attack_loss_grad(est, vs, cfg.margin_target);
  if (cfg.lambda != 0.0) axpy(cfg.lambda, regularizer_grad(est, vs), g);
  return g;
}

double victim_cross_entropy(const Estimator& est, const VictimState& vs, std::span<const int> labels) {
  if (vs.size() == 0) throw EmptyInputError("no victims");
  double s = 0.0;
  for (std::size_t v = 0; v < vs.size(); ++v) {
    const auto p = estimate(est, vs.features.row(v));
    s -= std::log(std::max(p[static_cast<std::size_t>(labels[v])], kProbFloor));
  }
  return s / static_cast<double>(vs.size());
}

std::vector<double> victim_cross_entropy_grad(const Estimator& est, const VictimState& vs,
                                              std::span<const int> labels) {
  if (vs.size() == 0) throw EmptyInputError("no victims");
  std::vector<double> g(est.param_count(), 0.0);
  const double w = 1.0 / static_cast<double>(vs.size());
  for (std::size_t v = 0; v < vs.size(); ++v) {
    auto x = vs.features.row(v);
    const auto p = estimate(est, x);
    const auto y = static_cast<std::size_t>(labels[v]);
    std::vector<double> dp(p.size(), 0.0);
    if (p[y] >= kProbFloor) dp[y] = -1.0 / p[y];
    estimate_vjp(est, x, dp, g, w);
  }
  return g;
}

}  // namespace uu
