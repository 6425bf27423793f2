#include "uu/model.hpp"

#include <cmath>
#include <string>

#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

std::size_t param_count(std::span<const std::size_t> arch) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) n += arch[l] * arch[l + 1] + arch[l + 1];
  return n;
}

void ModelParams::validate() const {
  if (arch.size() < 3) throw ConfigError("model needs at least one hidden layer");
  for (std::size_t w : arch) {
    if (w == 0) throw ConfigError("layer widths must be positive");
  }
  if (params.size() != param_count(arch)) {
    throw ShapeError("parameter vector length " + std::to_string(params.size()) +
                     " does not match architecture (" +
                     std::to_string(param_count(arch)) + ")");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
}

ModelParams init_model(std::vector<std::size_t> arch, double dropout_rate,
                       std::uint64_t seed) {
  ModelParams m;
  m.arch = std::move(arch);
  m.dropout_rate = dropout_rate;
  m.params.assign(param_count(m.arch), 0.0);
  m.validate();
  Rng rng(seed);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < m.arch.size(); ++l) {
    const std::size_t in = m.arch[l];
    const std::size_t out = m.arch[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) {
      m.params[off + k] = (2.0 * rng.uniform() - 1.0) * bound;
    }
    off += in * out + out;
  }
  return m;
}

namespace {

void check_input(const ModelParams& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw ShapeError("input has " + std::to_string(x.size()) +
                     " features, model expects " + std::to_string(model.input_dim()));
  }
}

}  // namespace

ForwardTrace forward_trace(const ModelParams& model, std::span<const double> x,
                           std::optional<std::uint64_t> dropout_seed) {
  check_input(model, x);
  const std::size_t layers = model.weight_layers();
  const bool drop = dropout_seed.has_value() && model.dropout_rate > 0.0;
  ForwardTrace t;
  t.acts.reserve(layers + 1);
  t.acts.emplace_back(x.begin(), x.end());
  if (drop) t.keep_scale.resize(layers - 1);
  std::optional<Rng> rng;
  if (drop) rng.emplace(*dropout_seed);
  const double inv_keep = drop ? 1.0 / (1.0 - model.dropout_rate) : 1.0;

  std::size_t off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = model.arch[l];
    const std::size_t out = model.arch[l + 1];
    const double* W = model.params.data() + off;
    const double* b = W + in * out;
    const auto& h = t.acts.back();
    std::vector<double> z(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = b[i];
      const double* wi = W + i * in;
      for (std::size_t j = 0; j < in; ++j) s += wi[j] * h[j];
      z[i] = s;
    }
    if (l + 1 < layers) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
      if (drop) {
        auto& ks = t.keep_scale[l];
        ks.resize(out);
        for (std::size_t i = 0; i < out; ++i) {
          ks[i] = rng->uniform() >= model.dropout_rate ? inv_keep : 0.0;
          z[i] *= ks[i];
        }
      }
    }
    t.acts.push_back(std::move(z));
    off += in * out + out;
  }
  return t;
}

std::vector<double> forward(const ModelParams& model, std::span<const double> x,
                            std::optional<std::uint64_t> dropout_seed) {
  return forward_trace(model, x, dropout_seed).acts.back();
}

std::vector<double> hidden_rep(const ModelParams& model, std::span<const double> x) {
  if (model.arch.size() < 3) throw ConfigError("hidden_rep needs a hidden layer");
  auto t = forward_trace(model, x);
  return t.acts[t.acts.size() - 2];
}

void backward(const ModelParams& model, const ForwardTrace& trace,
              std::span<const double> dlogits, std::span<double> grad, double scale,
              std::span<double> dx) {
  const std::size_t layers = model.weight_layers();
  std::vector<double> delta(dlogits.begin(), dlogits.end());
  for (double& v : delta) v *= scale;

  // Offsets of each layer's parameter block.
  std::vector<std::size_t> offs(layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offs[l] = off;
    off += model.arch[l] * model.arch[l + 1] + model.arch[l + 1];
  }

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = model.arch[l];
    const std::size_t out = model.arch[l + 1];
    const double* W = model.params.data() + offs[l];
    double* gW = grad.data() + offs[l];
    double* gb = gW + in * out;
    const auto& h = trace.acts[l];
    for (std::size_t i = 0; i < out; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      gb[i] += di;
      double* gwi = gW + i * in;
      for (std::size_t j = 0; j < in; ++j) gwi[j] += di * h[j];
    }
    if (l == 0 && dx.empty()) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      const double* wi = W + i * in;
      for (std::size_t j = 0; j < in; ++j) prev[j] += wi[j] * di;
    }
    if (l == 0) {
      std::copy(prev.begin(), prev.end(), dx.begin());
      break;
    }
    // Through dropout and ReLU of layer l-1's output.
    const auto& a = trace.acts[l];
    const bool drop = !trace.keep_scale.empty();
    for (std::size_t j = 0; j < in; ++j) {
      if (a[j] <= 0.0) {
        prev[j] = 0.0;
      } else if (drop) {
        prev[j] *= trace.keep_scale[l - 1][j];
      }
    }
    delta = std::move(prev);
  }
}

Loss parse_loss(std::string_view tag) {
  if (tag == "cross_entropy" || tag == "ce") return Loss::cross_entropy;
  throw ConfigError("unknown loss tag '" + std::string(tag) + "'");
}

double cross_entropy(std::span<const double> logits, int label) {
  return -log_softmax(logits)[static_cast<std::size_t>(label)];
}

std::vector<double> cross_entropy_dlogits(std::span<const double> logits, int label) {
  auto p = softmax(logits);
  p[static_cast<std::size_t>(label)] -= 1.0;
  return p;
}

std::vector<double> sample_gradient(const ModelParams& model, std::span<const double> x,
                                    int label, Loss) {
  std::vector<double> g(model.params.size(), 0.0);
  auto t = forward_trace(model, x);
  backward(model, t, cross_entropy_dlogits(t.acts.back(), label), g);
  return g;
}

std::vector<double> grad_params(const ModelParams& model, const Dataset& data,
                                std::span<const std::size_t> rows, Loss) {
  if (rows.empty()) throw EmptyInputError("grad_params: empty batch");
  std::vector<double> g(model.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    auto t = forward_trace(model, data.row(i));
    backward(model, t, cross_entropy_dlogits(t.acts.back(), data.labels[i]), g, scale);
  }
  return g;
}

std::vector<double> grad_params(const ModelParams& model, const Dataset& batch, Loss loss) {
  std::vector<std::size_t> rows(batch.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return grad_params(model, batch, rows, loss);
}

double mean_loss(const ModelParams& model, const Dataset& batch, Loss) {
  if (batch.size() == 0) throw EmptyInputError("mean_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    s += cross_entropy(forward(model, batch.row(i)), batch.labels[i]);
  }
  return s / static_cast<double>(batch.size());
}

std::vector<double> hvp_central(const GradientFn& grad, std::span<const double> theta,
                                std::span<const double> v) {
  const double vinf = norm_inf(v);
  if (vinf == 0.0) return std::vector<double>(v.size(), 0.0);
  const double h = 1e-4 / (1.0 + vinf);
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  axpy(h, v, plus);
  axpy(-h, v, minus);
  auto gp = grad(plus);
  auto gm = grad(minus);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
  return out;
}

std::vector<double> hvp(const ModelParams& model, const Dataset& batch,
                        std::span<const double> v) {
  if (v.size() != model.params.size()) throw ShapeError("hvp: vector length mismatch");
  ModelParams probe = model;
  auto g = [&](std::span<const double> theta) {
    probe.params.assign(theta.begin(), theta.end());
    return grad_params(probe, batch);
  };
  return hvp_central(g, model.params, v);
}

}  // namespace uu
