#include "uu/metrics.hpp"

#include <cmath>
#include <numeric>

#include "uu/errors.hpp"

namespace uu {

namespace {

void check_inputs(std::span<const ProbVector> probs, std::span<const int> labels, int bins) {
  if (probs.empty()) throw EmptyInputError("metric over empty input");
  if (probs.size() != labels.size()) throw ShapeError("probs/labels length mismatch");
  if (bins < 1) throw ConfigError("bins must be >= 1");
}

std::size_t width_bin(double conf, std::size_t classes, int bins) {
  const double lo = 1.0 / static_cast<double>(classes);
  const double t = (conf - lo) / (1.0 - lo);
  const auto b = static_cast<long>(std::floor(t * bins));
  return static_cast<std::size_t>(std::clamp<long>(b, 0, bins - 1));
}

double weighted_gap(const std::vector<double>& acc_sum, const std::vector<double>& conf_sum,
                    const std::vector<std::size_t>& count, std::size_t n) {
  double e = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    e += std::abs(acc_sum[b] - conf_sum[b]) / static_cast<double>(n);
  }
  return e;
}

}  // namespace

double ece(std::span<const ProbVector> probs, std::span<const int> labels, int bins) {
  check_inputs(probs, labels, bins);
  const auto B = static_cast<std::size_t>(bins);
  std::vector<double> acc(B, 0.0), conf(B, 0.0);
  std::vector<std::size_t> cnt(B, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double c = probs[i].confidence();
    const std::size_t b = width_bin(c, probs[i].size(), bins);
    acc[b] += static_cast<int>(probs[i].top_label()) == labels[i] ? 1.0 : 0.0;
    conf[b] += c;
    ++cnt[b];
  }
  return weighted_gap(acc, conf, cnt, probs.size());
}

double ace(std::span<const ProbVector> probs, std::span<const int> labels, int bins) {
  check_inputs(probs, labels, bins);
  const std::size_t n = probs.size();
  if (n < static_cast<std::size_t>(bins)) throw ConfigError("ace needs n >= bins");
  std::vector<double> confs(n);
  for (std::size_t i = 0; i < n; ++i) confs[i] = probs[i].confidence();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confs[a] < confs[b]; });

  const auto B = static_cast<std::size_t>(bins);
  std::vector<double> acc(B, 0.0), conf(B, 0.0);
  std::vector<std::size_t> cnt(B, 0);
  std::size_t bin = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    const bool tie = r > 0 && confs[order[r - 1]] == confs[i];
    if (!tie) bin = r * B / n;
    acc[bin] += static_cast<int>(probs[i].top_label()) == labels[i] ? 1.0 : 0.0;
    conf[bin] += confs[i];
    ++cnt[bin];
  }
  return weighted_gap(acc, conf, cnt, n);
}

double brier(std::span<const ProbVector> probs, std::span<const int> labels) {
  check_inputs(probs, labels, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (std::size_t c = 0; c < probs[i].size(); ++c) {
      const double t = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
      s += (probs[i][c] - t) * (probs[i][c] - t);
    }
  }
  return s / static_cast<double>(probs.size());
}

double top_label_accuracy(std::span<const ProbVector> probs, std::span<const int> labels) {
  check_inputs(probs, labels, 1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    hit += static_cast<int>(probs[i].top_label()) == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

double label_preservation(std::span<const int> before, std::span<const int> after) {
  if (before.size() != after.size()) throw ShapeError("label_preservation: length mismatch");
  if (before.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < before.size(); ++i) same += before[i] == after[i];
  return static_cast<double>(same) / static_cast<double>(before.size());
}

std::vector<ReliabilityBin> reliability_bins(std::span<const ProbVector> probs,
                                             std::span<const int> labels, int bins) {
  check_inputs(probs, labels, bins);
  const auto B = static_cast<std::size_t>(bins);
  const double lo = 1.0 / static_cast<double>(probs.front().size());
  std::vector<ReliabilityBin> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    out[b].lower = lo + (1.0 - lo) * static_cast<double>(b) / bins;
    out[b].upper = lo + (1.0 - lo) * static_cast<double>(b + 1) / bins;
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto& bin = out[width_bin(probs[i].confidence(), probs[i].size(), bins)];
    ++bin.count;
    bin.accuracy += static_cast<int>(probs[i].top_label()) == labels[i] ? 1.0 : 0.0;
    bin.confidence += probs[i].confidence();
  }
  for (auto& bin : out) {
    if (bin.count == 0) continue;
    bin.accuracy /= static_cast<double>(bin.count);
    bin.confidence /= static_cast<double>(bin.count);
  }
  return out;
}

}  // namespace uu
