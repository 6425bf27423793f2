#include "uu/estimator.hpp"

#include <cmath>
#include <string>

#include "uu/errors.hpp"

namespace uu {

void ProbVector::validate(double tol) const {
  double s = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ShapeError("probability entry negative or non-finite");
    s += p;
  }
  if (std::abs(s - 1.0) > tol) throw ShapeError("probabilities do not sum to 1");
}

EstimatorKind parse_estimator_kind(std::string_view tag) {
  if (tag == "softmax") return EstimatorKind::softmax;
  if (tag == "ensemble") return EstimatorKind::ensemble;
  if (tag == "mc_dropout") return EstimatorKind::mc_dropout;
  throw ConfigError("unknown estimator kind '" + std::string(tag) + "'");
}

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::softmax: return "softmax";
    case EstimatorKind::ensemble: return "ensemble";
    case EstimatorKind::mc_dropout: return "mc_dropout";
  }
  return "?";
}

void Estimator::validate() const {
  if (models.empty()) throw ConfigError("estimator has no models");
  if (kind == EstimatorKind::ensemble && models.size() < 2) {
    throw ConfigError("ensemble needs at least 2 members");
  }
  if (kind == EstimatorKind::mc_dropout && mc_samples < 1) {
    throw ConfigError("mc_samples must be >= 1");
  }
  for (const auto& m : models) m.validate();
}

std::size_t Estimator::param_count() const {
  std::size_t n = 0;
  for (const auto& m : models) n += m.params.size();
  return n;
}

std::vector<double> Estimator::flat_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& m : models) out.insert(out.end(), m.params.begin(), m.params.end());
  return out;
}

void Estimator::set_flat_params(std::span<const double> flat) {
  if (flat.size() != param_count()) throw ShapeError("flat parameter length mismatch");
  std::size_t off = 0;
  for (auto& m : models) {
    std::copy(flat.begin() + off, flat.begin() + off + m.params.size(), m.params.begin());
    off += m.params.size();
  }
}

Estimator make_softmax(ModelParams model) {
  Estimator e;
  e.kind = EstimatorKind::softmax;
  e.models.push_back(std::move(model));
  return e;
}

Estimator make_mc_dropout(ModelParams model, int samples, std::uint64_t seed) {
  Estimator e;
  e.kind = EstimatorKind::mc_dropout;
  e.models.push_back(std::move(model));
  e.mc_samples = samples;
  e.mc_seed = seed;
  e.validate();
  return e;
}

Estimator make_ensemble(std::vector<ModelParams> members) {
  Estimator e;
  e.kind = EstimatorKind::ensemble;
  e.models = std::move(members);
  e.validate();
  return e;
}

namespace {

void accumulate(std::vector<double>& acc, std::span<const double> p, double w) {
  for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += w * p[c];
}

// d/dz of (g . softmax(z)) = p * (g - g.p)
std::vector<double> softmax_vjp(std::span<const double> p, std::span<const double> g) {
  const double gp = dot(g, p);
  std::vector<double> out(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (g[c] - gp);
  return out;
}

}  // namespace

ProbVector estimate(const Estimator& est, std::span<const double> x) {
  if (est.models.empty()) throw ConfigError("estimator has no models");
  const std::size_t C = est.models.front().output_dim();
  switch (est.kind) {
    case EstimatorKind::softmax:
      return ProbVector(softmax(forward(est.models.front(), x)));
    case EstimatorKind::ensemble: {
      if (est.models.size() < 2) throw ConfigError("ensemble needs at least 2 members");
      std::vector<double> acc(C, 0.0);
      const double w = 1.0 / static_cast<double>(est.models.size());
      for (const auto& m : est.models) accumulate(acc, softmax(forward(m, x)), w);
      return ProbVector(std::move(acc));
    }
    case EstimatorKind::mc_dropout: {
      if (est.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
      std::vector<double> acc(C, 0.0);
      const double w = 1.0 / static_cast<double>(est.mc_samples);
      for (int s = 0; s < est.mc_samples; ++s) {
        accumulate(acc, softmax(forward(est.models.front(), x, est.mc_seed + s)), w);
      }
      return ProbVector(std::move(acc));
    }
  }
  throw ConfigError("unknown estimator kind");
}

void estimate_vjp(const Estimator& est, std::span<const double> x,
                  std::span<const double> dl_dprobs, std::span<double> grad, double scale) {
  switch (est.kind) {
    case EstimatorKind::softmax: {
      const auto& m = est.models.front();
      auto t = forward_trace(m, x);
      auto p = softmax(t.acts.back());
      backward(m, t, softmax_vjp(p, dl_dprobs), grad.first(m.params.size()), scale);
      return;
    }
    case EstimatorKind::ensemble: {
      const double w = scale / static_cast<double>(est.models.size());
      std::size_t off = 0;
      for (const auto& m : est.models) {
        auto t = forward_trace(m, x);
        auto p = softmax(t.acts.back());
        backward(m, t, softmax_vjp(p, dl_dprobs), grad.subspan(off, m.params.size()), w);
        off += m.params.size();
      }
      return;
    }
    case EstimatorKind::mc_dropout: {
      const auto& m = est.models.front();
      const double w = scale / static_cast<double>(est.mc_samples);
      for (int s = 0; s < est.mc_samples; ++s) {
        auto t = forward_trace(m, x, est.mc_seed + s);
        auto p = softmax(t.acts.back());
        backward(m, t, softmax_vjp(p, dl_dprobs), grad.first(m.params.size()), w);
      }
      return;
    }
  }
}

std::vector<double> estimator_scores(const Estimator& est, std::span<const double> x) {
  if (est.kind == EstimatorKind::softmax) return forward(est.models.front(), x);
  auto p = estimate(est, x);
  std::vector<double> out(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) out[c] = std::log(std::max(p[c], 1e-300));
  return out;
}

}  // namespace uu
