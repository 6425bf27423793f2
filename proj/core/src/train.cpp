#include "uu/train.hpp"

#include <cmath>
#include <numeric>

#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (adv_epsilon < 0.0 || adv_steps < 1) throw ConfigError("invalid adversarial settings");
}

std::vector<double> pgd_perturb(const ModelParams& model, std::span<const double> x,
                                int label, double epsilon, int steps) {
  std::vector<double> adv(x.begin(), x.end());
  std::vector<double> dx(x.size());
  std::vector<double> scratch(model.params.size());
  const double step = 2.5 * epsilon / steps;
  for (int s = 0; s < steps; ++s) {
    auto t = forward_trace(model, adv);
    backward(model, t, cross_entropy_dlogits(t.acts.back(), label), scratch, 1.0, dx);
    for (std::size_t j = 0; j < adv.size(); ++j) {
      const double sgn = dx[j] > 0 ? 1.0 : (dx[j] < 0 ? -1.0 : 0.0);
      adv[j] = std::clamp(adv[j] + step * sgn, x[j] - epsilon, x[j] + epsilon);
    }
  }
  return adv;
}

ModelParams train_from(ModelParams model, const Dataset& data,
                       std::span<const std::size_t> rows, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (rows.empty()) throw EmptyInputError("train: empty dataset");
  if (data.dim() != model.input_dim()) throw ShapeError("train: feature width mismatch");
  for (std::size_t i : rows) {
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= model.output_dim()) {
      throw IndexError("train: label outside model output range");
    }
  }

  Rng order_rng(cfg.seed);
  std::vector<std::size_t> order(rows.begin(), rows.end());
  std::vector<double> grad(model.params.size());
  const bool dropout = model.dropout_rate > 0.0;
  std::uint64_t sample_counter = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const int y = data.labels[i];
        std::vector<double> x(data.row(i).begin(), data.row(i).end());
        if (cfg.adv_epsilon > 0.0) x = pgd_perturb(model, x, y, cfg.adv_epsilon, cfg.adv_steps);
        std::optional<std::uint64_t> dseed;
        if (dropout) dseed = mix_seed(cfg.seed, sample_counter);
        ++sample_counter;
        auto t = forward_trace(model, x, dseed);
        epoch_loss += cross_entropy(t.acts.back(), y);
        backward(model, t, cross_entropy_dlogits(t.acts.back(), y), grad, scale);
      }
      if (cfg.weight_decay > 0.0) axpy(cfg.weight_decay, model.params, grad);
      axpy(-cfg.learning_rate, grad, model.params);
    }
    if (!std::isfinite(epoch_loss)) throw DivergenceError(epoch);
    for (double v : model.params) {
      if (!std::isfinite(v)) throw DivergenceError(epoch);
    }
  }
  return model;
}

ModelParams train_from(ModelParams init, const Dataset& data, const TrainConfig& cfg) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return train_from(std::move(init), data, rows, cfg);
}

ModelParams train(const std::vector<std::size_t>& arch, double dropout_rate,
                  std::uint64_t init_seed, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  return train_from(init_model(arch, dropout_rate, init_seed), data, cfg);
}

double accuracy(const ModelParams& model, const Dataset& data) {
  if (data.size() == 0) throw EmptyInputError("accuracy: empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hit += static_cast<int>(argmax(forward(model, data.row(i)))) == data.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace uu
