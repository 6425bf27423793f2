#include "uu/unlearn.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

std::vector<std::size_t> ForgetMask::forget_set() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < selected.size(); ++t) {
    if (selected[t]) out.push_back(candidates[t]);
  }
  return out;
}

void ForgetMask::validate() const {
  if (weights.size() != candidates.size()) throw ShapeError("mask weights/candidates length mismatch");
  for (double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("mask weight outside [0, 1]");
  }
  if (rounded()) {
    if (selected.size() != candidates.size()) throw ShapeError("mask bits length mismatch");
    const auto ones = static_cast<std::size_t>(std::count(selected.begin(), selected.end(), 1));
    if (ones != std::min(budget, candidates.size())) {
      throw ConfigError("rounded mask has " + std::to_string(ones) + " ones, budget " +
                        std::to_string(budget));
    }
  }
}

ForgetMask round_mask(std::vector<std::size_t> candidates, std::vector<double> weights,
                      std::size_t budget) {
  if (weights.size() != candidates.size()) throw ShapeError("mask weights/candidates length mismatch");
  ForgetMask m;
  m.budget = budget;
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  m.selected.assign(weights.size(), 0);
  for (std::size_t k = 0; k < std::min(budget, order.size()); ++k) m.selected[order[k]] = 1;
  m.candidates = std::move(candidates);
  m.weights = std::move(weights);
  return m;
}

ForgetMask mask_from_positions(std::vector<std::size_t> candidates,
                               std::span<const std::size_t> positions) {
  ForgetMask m;
  m.weights.assign(candidates.size(), 0.0);
  m.selected.assign(candidates.size(), 0);
  for (std::size_t p : positions) {
    if (p >= candidates.size()) throw IndexError("mask position out of range");
    m.weights[p] = 1.0;
    m.selected[p] = 1;
  }
  m.budget = static_cast<std::size_t>(std::count(m.selected.begin(), m.selected.end(), 1));
  m.candidates = std::move(candidates);
  return m;
}

UnlearnMethod parse_unlearn_method(std::string_view tag) {
  if (tag == "first_order") return UnlearnMethod::first_order;
  if (tag == "second_order") return UnlearnMethod::second_order;
  if (tag == "unrolling") return UnlearnMethod::unrolling;
  if (tag == "fisher") return UnlearnMethod::fisher;
  if (tag == "ssd") return UnlearnMethod::ssd;
  if (tag == "sisa") return UnlearnMethod::sisa;
  throw ConfigError("unknown unlearning method '" + std::string(tag) + "'");
}

std::string_view to_string(UnlearnMethod method) {
  switch (method) {
    case UnlearnMethod::first_order: return "first_order";
    case UnlearnMethod::second_order: return "second_order";
    case UnlearnMethod::unrolling: return "unrolling";
    case UnlearnMethod::fisher: return "fisher";
    case UnlearnMethod::ssd: return "ssd";
    case UnlearnMethod::sisa: return "sisa";
  }
  return "?";
}

namespace {

const ForgetMask& require_rounded(const ForgetMask& mask) {
  if (!mask.rounded()) throw ConfigError("unlearning needs a rounded (binary) mask");
  return mask;
}

std::vector<double> gradient_sum(const ModelParams& model, const Dataset& data,
                                 std::span<const std::size_t> rows) {
  std::vector<double> g(model.params.size(), 0.0);
  for (std::size_t i : rows) {
    auto t = forward_trace(model, data.row(i));
    backward(model, t, cross_entropy_dlogits(t.acts.back(), data.labels[i]), g);
  }
  return g;
}

std::vector<std::size_t> retained_rows(const Dataset& data, std::span<const std::size_t> forget) {
  std::vector<std::uint8_t> gone(data.size(), 0);
  for (std::size_t i : forget) {
    if (i >= data.size()) throw IndexError("forget index outside training set");
    gone[i] = 1;
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!gone[i]) keep.push_back(i);
  }
  return keep;
}

// (H_sum(rows) + damping I) as a linear operator.
LinearOp damped_hessian(const ModelParams& model, const Dataset& data,
                        std::vector<std::size_t> rows, double damping) {
  return [&model, &data, rows = std::move(rows), damping](std::span<const double> v) {
    ModelParams probe = model;
    const double n = static_cast<double>(rows.size());
    auto grad = [&](std::span<const double> theta) {
      probe.params.assign(theta.begin(), theta.end());
      auto g = grad_params(probe, data, rows);
      for (double& x : g) x *= n;
      return g;
    };
    auto hv = hvp_central(grad, model.params, v);
    axpy(damping, v, hv);
    return hv;
  };
}

}  // namespace

ModelParams unlearn_first_order(const ModelParams& theta_star, const Dataset& data,
                                const ForgetMask& mask, double tau) {
  const auto forget = require_rounded(mask).forget_set();
  ModelParams out = theta_star;
  if (forget.empty() || tau == 0.0) return out;
  axpy(tau, gradient_sum(theta_star, data, forget), out.params);
  return out;
}

CgResult conjugate_gradient(const LinearOp& apply, std::span<const double> b, int max_iters,
                            double tol) {
  CgResult res;
  const std::size_t n = b.size();
  res.x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  double rr = dot(r, r);
  std::vector<double> best = res.x;
  double best_rel = 1.0;
  for (int it = 1; it <= max_iters; ++it) {
    auto Ap = apply(p);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) break;  // lost positive definiteness
    const double a = rr / pAp;
    axpy(a, p, res.x);
    axpy(-a, Ap, r);
    const double rr_new = dot(r, r);
    const double rel = std::sqrt(rr_new) / bnorm;
    res.iterations = it;
    if (rel < best_rel) {
      best_rel = rel;
      best = res.x;
    }
    if (rel <= tol) {
      res.converged = true;
      break;
    }
    const double beta = rr_new / rr;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_new;
  }
  res.x = std::move(best);
  res.relative_residual = best_rel;
  return res;
}

SecondOrderResult unlearn_second_order(const ModelParams& theta_star, const Dataset& data,
                                       const ForgetMask& mask, double damping, int cg_iters,
                                       double cg_tol) {
  const auto forget = require_rounded(mask).forget_set();
  SecondOrderResult res{theta_star, true, 0, 0.0};
  if (forget.empty()) return res;
  auto keep = retained_rows(data, forget);
  if (keep.empty()) throw EmptyInputError("second-order unlearning needs a retained set");
  auto g = gradient_sum(theta_star, data, forget);
  auto cg = conjugate_gradient(damped_hessian(theta_star, data, std::move(keep), damping), g,
                               cg_iters, cg_tol);
  axpy(1.0, cg.x, res.model.params);
  res.converged = cg.converged;
  res.iterations = cg.iterations;
  res.relative_residual = cg.relative_residual;
  return res;
}

ModelParams unlearn_unrolling(const ModelParams& theta_star, const ModelParams& theta_init,
                              const Dataset& data, const ForgetMask& mask, double lr, int epochs) {
  const auto forget = require_rounded(mask).forget_set();
  if (theta_init.arch != theta_star.arch) throw ShapeError("unrolling: init/trained architecture mismatch");
  ModelParams out = theta_star;
  if (forget.empty() || lr == 0.0 || epochs == 0) return out;
  axpy(lr * epochs, gradient_sum(theta_init, data, forget), out.params);
  return out;
}

std::vector<double> fisher_diagonal(const ModelParams& model, const Dataset& data,
                                    std::span<const std::size_t> rows) {
  std::vector<double> f(model.params.size(), 0.0);
  if (rows.empty()) return f;
  const double w = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    auto g = sample_gradient(model, data.row(i), data.labels[i]);
    for (std::size_t k = 0; k < f.size(); ++k) f[k] += w * g[k] * g[k];
  }
  return f;
}

ModelParams unlearn_fisher(const ModelParams& theta_star, const Dataset& data,
                           const ForgetMask& mask, double noise_scale, double damping,
                           std::uint64_t seed) {
  const auto forget = require_rounded(mask).forget_set();
  ModelParams out = theta_star;
  if (forget.empty() || noise_scale == 0.0) return out;
  auto keep = retained_rows(data, forget);
  if (keep.empty()) throw EmptyInputError("Fisher forgetting needs a retained set");
  auto f = fisher_diagonal(theta_star, data, keep);
  Rng rng(seed);
  for (std::size_t k = 0; k < f.size(); ++k) {
    out.params[k] += rng.normal() * noise_scale / std::sqrt(f[k] + damping);
  }
  return out;
}

std::vector<double> ssd_dampen(std::span<const double> params, std::span<const double> f_forget,
                               std::span<const double> f_full, double alpha, double lambda) {
  std::vector<double> out(params.begin(), params.end());
  if (std::isinf(alpha)) return out;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (f_forget[k] > alpha * f_full[k]) {
      out[k] *= std::min(lambda * f_full[k] / f_forget[k], 1.0);
    }
  }
  return out;
}

ModelParams unlearn_ssd(const ModelParams& theta_star, const Dataset& data,
                        const ForgetMask& mask, double alpha, double lambda) {
  const auto forget = require_rounded(mask).forget_set();
  ModelParams out = theta_star;
  if (forget.empty()) return out;
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto ff = fisher_diagonal(theta_star, data, forget);
  auto fd = fisher_diagonal(theta_star, data, all);
  out.params = ssd_dampen(theta_star.params, ff, fd, alpha, lambda);
  return out;
}

std::vector<double> model_update_psi(const ModelParams& theta_star, UnlearnMethod method,
                                     const Dataset& data, const ForgetMask& mask,
                                     const PsiOptions& opts) {
  if (method != UnlearnMethod::first_order && method != UnlearnMethod::second_order) {
    throw ConfigError("unlearning method '" + std::string(to_string(method)) +
                      "' has no differentiable update; craft with first_order and use transfer mode");
  }
  if (mask.weights.size() != mask.candidates.size()) throw ShapeError("mask weights/candidates length mismatch");
  std::vector<double> psi(theta_star.params.size(), 0.0);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    const double w = mask.weights[t];
    if (w == 0.0) continue;
    const std::size_t i = mask.candidates[t];
    auto tr = forward_trace(theta_star, data.row(i));
    backward(theta_star, tr, cross_entropy_dlogits(tr.acts.back(), data.labels[i]), psi, w);
  }
  if (method == UnlearnMethod::first_order) {
    for (double& v : psi) v *= opts.tau;
    return psi;
  }
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto cg = conjugate_gradient(damped_hessian(theta_star, data, std::move(all), opts.damping), psi,
                               opts.cg_iters, opts.cg_tol);
  return cg.x;
}

}  // namespace uu
