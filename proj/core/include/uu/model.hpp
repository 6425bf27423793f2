#pragma once

// Small fully-connected ReLU classifiers with exact reverse-mode gradients.
//
// Parameter layout: for each weight layer l (in = arch[l], out = arch[l+1])
// the out x in weight matrix W_l row-major, followed by the bias b_l.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "uu/dataset.hpp"

namespace uu {

enum class Activation : std::uint8_t { relu = 0 };

struct ModelParams {
  std::vector<std::size_t> arch;  // input, hidden..., output widths
  Activation activation = Activation::relu;
  std::vector<double> params;
  double dropout_rate = 0.0;

  std::size_t input_dim() const { return arch.front(); }
  std::size_t output_dim() const { return arch.back(); }
  std::size_t weight_layers() const { return arch.size() - 1; }
  void validate() const;

  bool operator==(const ModelParams&) const = default;
};

std::size_t param_count(std::span<const std::size_t> arch);

// He-uniform weights, zero biases.
ModelParams init_model(std::vector<std::size_t> arch, double dropout_rate,
                       std::uint64_t seed);

// Inverted-dropout keep masks are drawn per hidden unit from
// Rng(dropout_seed); kept units are scaled by 1 / (1 - rate).
std::vector<double> forward(const ModelParams& model, std::span<const double> x,
                            std::optional<std::uint64_t> dropout_seed = std::nullopt);

// Post-activation output of the penultimate layer (no dropout).
std::vector<double> hidden_rep(const ModelParams& model, std::span<const double> x);

// Intermediate values of one forward pass, kept for backprop.
struct ForwardTrace {
  std::vector<std::vector<double>> acts;       // acts[0] = x, acts[l] = layer l output
  std::vector<std::vector<double>> keep_scale;  // per hidden layer; empty without dropout
  std::vector<double> logits() const { return acts.back(); }
};

ForwardTrace forward_trace(const ModelParams& model, std::span<const double> x,
                           std::optional<std::uint64_t> dropout_seed = std::nullopt);

// Accumulates scale * dL/dparams into `grad` given dL/dlogits. When `dx` is
// non-empty it receives dL/dx (overwritten, not accumulated).
void backward(const ModelParams& model, const ForwardTrace& trace,
              std::span<const double> dlogits, std::span<double> grad,
              double scale = 1.0, std::span<double> dx = {});

enum class Loss { cross_entropy };
Loss parse_loss(std::string_view tag);

double cross_entropy(std::span<const double> logits, int label);
// d CE / d logits = softmax(logits) - onehot(label)
std::vector<double> cross_entropy_dlogits(std::span<const double> logits, int label);

// Gradient of the loss of a single sample.
std::vector<double> sample_gradient(const ModelParams& model, std::span<const double> x,
                                    int label, Loss loss = Loss::cross_entropy);

// Exact gradient of the mean loss over `batch`.
std::vector<double> grad_params(const ModelParams& model, const Dataset& batch,
                                Loss loss = Loss::cross_entropy);
// Same, restricted to `rows` of `data`.
std::vector<double> grad_params(const ModelParams& model, const Dataset& data,
                                std::span<const std::size_t> rows,
                                Loss loss = Loss::cross_entropy);

double mean_loss(const ModelParams& model, const Dataset& batch,
                 Loss loss = Loss::cross_entropy);

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// H v by central difference of an analytic gradient:
// (g(theta + h v) - g(theta - h v)) / 2h with h = 1e-4 / (1 + |v|_inf).
std::vector<double> hvp_central(const GradientFn& grad, std::span<const double> theta,
                                std::span<const double> v);

// Hessian-vector product of the mean loss over `batch` at `model`.
std::vector<double> hvp(const ModelParams& model, const Dataset& batch,
                        std::span<const double> v);

}  // namespace uu
