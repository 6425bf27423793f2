#pragma once

// Uncertainty-manipulation objectives evaluated on a set of victims:
// the hinge confidence loss, the hidden-space proximity regularizer and their
// weighted sum, together with exact parameter gradients.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uu/dataset.hpp"
#include "uu/estimator.hpp"
#include "uu/unlearn.hpp"

namespace uu {

enum class AttackMode { under, over, ov_un };
AttackMode parse_attack_mode(std::string_view tag);
std::string_view to_string(AttackMode mode);

// Direction assigned to an individual victim.
enum class VictimMode : std::uint8_t { under, over };

struct AttackConfig {
  AttackMode mode = AttackMode::ov_un;
  double lambda = 1.0;
  int k_neighbors = 10;
  double xi_percentile = 75.0;
  double margin_target = 0.9;
  std::size_t budget = 50;
  int restarts = 5;
  int ascent_steps = 200;
  double ascent_lr = 0.1;
  double tau = 0.01;
  UnlearnMethod unlearn_method = UnlearnMethod::first_order;
  std::uint64_t seed = 0;

  void validate(std::size_t candidate_count) const;
};

struct VictimState {
  Matrix features;                  // one row per victim
  std::vector<int> predicted;       // labels frozen under the pre-attack estimator
  std::vector<int> true_labels;
  std::vector<VictimMode> modes;
  Dataset holdout;                  // reference pool D'
  std::vector<std::vector<std::size_t>> reference;  // rows of `holdout` per victim
  std::vector<std::string> warnings;

  std::size_t size() const { return predicted.size(); }
};

// Hidden representations (penultimate layer) of every row of `data`.
Matrix hidden_matrix(const ModelParams& model, const Dataset& data);

// Rows of `pool` nearest to `h` in Euclidean distance, ties by lower row.
std::vector<std::size_t> nearest_neighbors(std::span<const double> h, const Matrix& pool, int k);

// exp(-mean distance to the k nearest rows of `pool_hidden`).
double proximity_hidden(std::span<const double> h, const Matrix& pool_hidden, int k);

// G_PR of x against `pool`, measured in the model's penultimate layer.
double proximity(const ModelParams& model, std::span<const double> x, const Dataset& pool, int k);

// Linear-interpolation percentile (q in [0, 100]) of `values`.
double percentile(std::vector<double> values, double q);

// Reference rows for a victim predicted as `label`: same-class rows whose
// proximity is >= the xi-th percentile (under) or <= the (100 - xi)-th
// percentile (over). An empty result falls back to the single best-ranked row
// and sets *fell_back.
std::vector<std::size_t> reference_set(std::span<const double> holdout_proximity,
                                       std::span<const int> holdout_predicted, int label,
                                       double xi_percentile, VictimMode mode,
                                       bool* fell_back = nullptr);

// Freezes victim labels under `est`, assigns per-victim modes (ov_un: under
// for correctly classified, over otherwise) and builds reference sets from
// `holdout` using proximities against `pool`.
VictimState build_victims(const Estimator& est, const Dataset& victims, const Dataset& holdout,
                          const Dataset& pool, const AttackConfig& cfg);

// Sum over victims of max(margin, 0) (under) or max(margin_target - margin, 0)
// (over), margin = E^{yhat} - max_{c != yhat} E^c.
double attack_loss(const Estimator& est, const VictimState& victims, double margin_target);

// Sum over victims of KL(E(x_v) || mean of E over its reference rows), with
// probabilities floored at 1e-12 inside the logarithms.
double regularizer_kl(const Estimator& est, const VictimState& victims);

// attack_loss + lambda * regularizer_kl
double total_attack_loss(const Estimator& est, const VictimState& victims, const AttackConfig& cfg);

// Gradients with respect to Estimator::flat_params().
std::vector<double> attack_loss_grad(const Estimator& est, const VictimState& victims,
                                     double margin_target);
std::vector<double> regularizer_grad(const Estimator& est, const VictimState& victims);
std::vector<double> total_attack_grad(const Estimator& est, const VictimState& victims,
                                      const AttackConfig& cfg);

// Mean cross-entropy of the victims against `labels` (used by the label
// misclassification baseline) and its gradient.
double victim_cross_entropy(const Estimator& est, const VictimState& victims,
                            std::span<const int> labels);
std::vector<double> victim_cross_entropy_grad(const Estimator& est, const VictimState& victims,
                                              std::span<const int> labels);

}  // namespace uu
