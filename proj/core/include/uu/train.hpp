#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uu/dataset.hpp"
#include "uu/model.hpp"

namespace uu {

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  // L-infinity PGD adversarial training; disabled when adv_epsilon == 0.
  double adv_epsilon = 0.0;
  int adv_steps = 5;

  void validate() const;
};

// Mini-batch SGD on mean cross-entropy + weight_decay/2 * |theta|^2, starting
// from `init`. Batch order and dropout masks derive from cfg.seed only, so the
// result is bit-reproducible. Throws DivergenceError on a non-finite loss.
ModelParams train_from(ModelParams init, const Dataset& data,
                       std::span<const std::size_t> rows, const TrainConfig& cfg);
ModelParams train_from(ModelParams init, const Dataset& data, const TrainConfig& cfg);

// init_model(arch, dropout_rate, init_seed) followed by train_from.
ModelParams train(const std::vector<std::size_t>& arch, double dropout_rate,
                  std::uint64_t init_seed, const Dataset& data, const TrainConfig& cfg);

// L-infinity PGD perturbation of x that increases the loss on `label`.
std::vector<double> pgd_perturb(const ModelParams& model, std::span<const double> x,
                                int label, double epsilon, int steps);

double accuracy(const ModelParams& model, const Dataset& data);

}  // namespace uu
