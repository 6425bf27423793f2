#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "uu/dataset.hpp"
#include "uu/model.hpp"

namespace uu {

// Indication weights over the adversary-accessible candidates. Weights are
// continuous in [0, 1] while crafting; `selected` holds the rounded bits.
struct ForgetMask {
  std::vector<std::size_t> candidates;  // row indices into the training set
  std::vector<double> weights;
  std::vector<std::uint8_t> selected;  // empty until rounded
  std::size_t budget = 0;

  bool rounded() const { return !selected.empty(); }
  std::size_t size() const { return candidates.size(); }
  // Training-set rows with selected == 1.
  std::vector<std::size_t> forget_set() const;
  // Throws unless weights lie in [0, 1] and, if rounded, exactly
  // min(budget, T) bits are set.
  void validate() const;
};

// Sets the `budget` largest weights to 1 (ties by lower position), rest to 0.
ForgetMask round_mask(std::vector<std::size_t> candidates, std::vector<double> weights,
                      std::size_t budget);

// Rounded mask selecting exactly the given candidate positions.
ForgetMask mask_from_positions(std::vector<std::size_t> candidates,
                               std::span<const std::size_t> positions);

enum class UnlearnMethod { first_order, second_order, unrolling, fisher, ssd, sisa };
UnlearnMethod parse_unlearn_method(std::string_view tag);
std::string_view to_string(UnlearnMethod method);

// theta* + tau * sum of forget-point gradients (one gradient-ascent step).
ModelParams unlearn_first_order(const ModelParams& theta_star, const Dataset& data,
                                const ForgetMask& mask, double tau);

struct CgResult {
  std::vector<double> x;
  bool converged = false;
  int iterations = 0;
  double relative_residual = 0.0;
};

using LinearOp = std::function<std::vector<double>(std::span<const double>)>;

// Conjugate gradients for a symmetric positive-definite operator. Stops
// when |r| <= tol * |b| or after max_iters; returns the best iterate seen.
CgResult conjugate_gradient(const LinearOp& apply, std::span<const double> b, int max_iters,
                            double tol);

struct SecondOrderResult {
  ModelParams model;
  bool converged = true;
  int iterations = 0;
  double relative_residual = 0.0;
};

// theta* + (H_r + damping I)^-1 * sum of forget-point gradients, where H_r is
// the Hessian of the summed loss over the retained rows.
SecondOrderResult unlearn_second_order(const ModelParams& theta_star, const Dataset& data,
                                       const ForgetMask& mask, double damping, int cg_iters,
                                       double cg_tol);

// theta* + lr * epochs * sum of forget-point gradients evaluated at theta_init.
ModelParams unlearn_unrolling(const ModelParams& theta_star, const ModelParams& theta_init,
                              const Dataset& data, const ForgetMask& mask, double lr, int epochs);

// Diagonal empirical Fisher: mean of squared per-sample gradients over `rows`.
std::vector<double> fisher_diagonal(const ModelParams& model, const Dataset& data,
                                    std::span<const std::size_t> rows);

// theta*_i + eps_i with eps_i ~ N(0, noise_scale^2 / (F_i + damping)), F the
// diagonal Fisher of the retained rows.
ModelParams unlearn_fisher(const ModelParams& theta_star, const Dataset& data,
                           const ForgetMask& mask, double noise_scale, double damping,
                           std::uint64_t seed);

// Where F_forget_i > alpha * F_full_i, scale theta_i by
// min(lambda * F_full_i / F_forget_i, 1). alpha = inf selects nothing.
std::vector<double> ssd_dampen(std::span<const double> params, std::span<const double> f_forget,
                               std::span<const double> f_full, double alpha, double lambda);

ModelParams unlearn_ssd(const ModelParams& theta_star, const Dataset& data,
                        const ForgetMask& mask, double alpha, double lambda);

// Parameter delta of a differentiable unlearning method under continuous
// weights: tau * sum_t w_t g_t (first order) or (H_r + damping I)^-1 sum_t w_t g_t
// (second order, H_r over all training rows). Linear in the weights.
struct PsiOptions {
  double tau = 1.0;
  double damping = 1e-3;
  int cg_iters = 100;
  double cg_tol = 1e-8;
};
std::vector<double> model_update_psi(const ModelParams& theta_star, UnlearnMethod method,
                                     const Dataset& data, const ForgetMask& mask,
                                     const PsiOptions& opts);

}  // namespace uu
