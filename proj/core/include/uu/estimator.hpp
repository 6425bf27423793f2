#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "uu/model.hpp"

namespace uu {

// Per-class probability distribution; entries >= 0 summing to 1.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {}

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t c) const { return probs_[c]; }
  std::span<const double> values() const { return probs_; }
  std::size_t top_label() const { return argmax(probs_); }
  double confidence() const { return probs_[top_label()]; }
  // Throws ShapeError unless entries are >= 0 and sum to 1 within tol.
  void validate(double tol = 1e-6) const;

  bool operator==(const ProbVector&) const = default;

 private:
  std::vector<double> probs_;
};

enum class EstimatorKind { softmax, ensemble, mc_dropout };
EstimatorKind parse_estimator_kind(std::string_view tag);
std::string_view to_string(EstimatorKind kind);

struct Estimator {
  EstimatorKind kind = EstimatorKind::softmax;
  std::vector<ModelParams> models;
  int mc_samples = 30;
  std::uint64_t mc_seed = 0;

  void validate() const;
  // Total length of all member parameter vectors, concatenated in order.
  std::size_t param_count() const;
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);
};

Estimator make_softmax(ModelParams model);
Estimator make_mc_dropout(ModelParams model, int samples, std::uint64_t seed);
Estimator make_ensemble(std::vector<ModelParams> members);

// softmax: softmax(logits); ensemble: mean of member softmaxes;
// mc_dropout: mean softmax over passes seeded mc_seed .. mc_seed + M - 1.
ProbVector estimate(const Estimator& est, std::span<const double> x);

// Vector-Jacobian product: accumulates scale * (dL/dp)^T dp/dtheta into
// `grad`, laid out like Estimator::flat_params().
void estimate_vjp(const Estimator& est, std::span<const double> x,
                  std::span<const double> dl_dprobs, std::span<double> grad,
                  double scale = 1.0);

// Logit-like scores suitable for post-hoc calibration: raw logits for a
// softmax estimator, log of the mean probabilities otherwise.
std::vector<double> estimator_scores(const Estimator& est, std::span<const double> x);

}  // namespace uu
